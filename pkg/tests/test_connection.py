import numpy as np
import pytest
from scipy.linalg import expm

from akflow.connection import chern, covariant_derivative, levi_civita, nijenhuis
from akflow.fields import PeriodicGrid, TensorField, ein, max_abs, partial
from akflow.identities import convergence_study, run_all
from akflow.structure import (EXACT, AlmostKahlerStructure, conjugation_family, default_generator,
                              flat_kahler, standard_blocks)


def test_flat_connections_vanish(flat_line):
    c = chern(flat_line)
    for f in (c.gamma, c.theta, c.upsilon, c.tau, c.nijenhuis):
        assert max_abs(f) == 0.0


def test_levi_civita_is_scale_invariant(family_fd):
    s = family_fd
    scaled = AlmostKahlerStructure(s.J, 2.0 * s.omega)
    assert max_abs(scaled.g - 2.0 * s.g) == 0.0
    assert max_abs(levi_civita(scaled) - levi_civita(s)) <= 1e-12


def _metric_at(x, eps=0.1):
    """g at x_1 = x (complex allowed) from the matrix exponential directly."""
    A = default_generator(4)
    J0 = flat_kahler(PeriodicGrid(4, (8, 1, 1, 1), 4)).J.values[0, 0, 0, 0]
    S = expm(eps * np.sin(x) * A)
    E = S @ J0.T @ np.linalg.inv(S)
    return E.T @ standard_blocks(4).T  # g_ij = J_i^s omega_js


def test_levi_civita_matches_complex_step_oracle():
    g = PeriodicGrid(4, (64, 1, 1, 1), 4)
    s = conjugation_family(g, eps=0.1, backend=EXACT)
    x = 2 * np.pi * 8 / 64
    h = 1e-30
    gv = _metric_at(x).real
    dg = np.zeros((4, 4, 4))
    dg[0] = _metric_at(x + 1j * h).imag / h  # only x_1 varies
    gi = np.linalg.inv(gv)
    oracle = 0.5 * (np.einsum("kl,ijl->kij", gi, dg) + np.einsum("kl,jil->kij", gi, dg)
                    - np.einsum("kl,lij->kij", gi, dg))
    assert np.max(np.abs(levi_civita(s).values[8, 0, 0, 0] - oracle)) <= 1e-10


def test_nijenhuis_antisymmetric(family_fd):
    N = nijenhuis(family_fd)
    assert max_abs(N + ein("ijk->ikj", N)) <= 1e-14


def test_dimension_two_nijenhuis_vanishes_fd():
    # the discrete derivative breaks the product rule, so N -> 0 at the stencil order
    errs = [max_abs(nijenhuis(conjugation_family(PeriodicGrid(2, (n, 1), 4), eps=0.2)))
            for n in (32, 64, 128)]
    assert np.log2(errs[1] / errs[2]) >= 3.0


def test_connection_ids_exact(family_exact):
    ids = {"N-8TAU", "THETA-N", "N-DOMEGA", "CHERN-PARALLEL", "LC-METRIC", "TAU-11",
           "TAU-TRACE", "TAU-CYCLIC", "TAU-TYPE", "TAU-SYM", "TAUTAU-11", "DJ-TAU"}
    rep = run_all(family_exact, selection=ids)
    for r in rep.results:
        assert r.status == "pass", r
        assert r.relative <= 1e-9


def test_chern_metric_parallel_exact(family_exact):
    c = chern(family_exact)
    assert max_abs(covariant_derivative(family_exact.g, c.upsilon)) <= 1e-9
    assert max_abs(covariant_derivative(family_exact.g, c.gamma)) <= 1e-9
    assert max_abs(covariant_derivative(family_exact.omega, c.upsilon)) <= 1e-9
    assert max_abs(covariant_derivative(family_exact.J, c.upsilon)) <= 1e-9


def test_covariant_derivative_of_scalar_is_partial(family_fd):
    c = chern(family_fd)
    f = TensorField.from_values(family_fd.grid, np.sin(family_fd.grid.coordinate(0)), "")
    assert max_abs(covariant_derivative(f, c.gamma) - partial(f)) == 0.0


def test_covariant_derivative_needs_connection_layout(family_fd):
    with pytest.raises(TypeError):
        covariant_derivative(family_fd.g, family_fd.g)


def test_tau_and_commutator_converge():
    res = convergence_study({"eps": 0.1}, ["N-8TAU", "COMMUTATOR", "TAU-CYCLIC"], [32, 64, 128])
    for r in res:
        assert r.status in ("converging", "at-machine-precision"), r.as_dict()
        if r.status == "converging":
            assert r.order >= 3.0
