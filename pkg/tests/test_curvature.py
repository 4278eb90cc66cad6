import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from akflow.connection import levi_civita
from akflow.curvature import GeometryCache, riemann, scal_times
from akflow.fields import PeriodicGrid, TensorField, ein, max_abs
from akflow.identities import convergence_study, run_all
from akflow.structure import EXACT, conjugation_family

from helpers import random_generator


class _Metric:
    """Bare metric holder for the Levi-Civita/Riemann path."""

    def __init__(self, grid, gv):
        self.grid, self.dim = grid, grid.dim
        self.g = TensorField.from_values(grid, gv, "ll")
        self.g_inv = TensorField.from_values(grid, np.linalg.inv(gv), "uu")


def conformal_scalar_error(n, order=8):
    grid = PeriodicGrid(4, (n, 1, 1, 1), order)
    x = grid.coordinate(0)
    f = 0.1 * np.sin(x)
    m = _Metric(grid, np.exp(2 * f)[..., None, None] * np.eye(4))
    rm = riemann(levi_civita(m), m)
    R = ein("jk,jk->", m.g_inv, ein("il,ijkl->jk", m.g_inv, rm)).values
    # g = e^{2f} delta in dimension 4: R = -e^{-2f} (6 f'' + 6 f'^2)
    exact = -np.exp(-2 * f) * (6 * (-0.1 * np.sin(x)) + 6 * (0.1 * np.cos(x)) ** 2)
    return abs(R[0, 0, 0, 0] - exact[0, 0, 0, 0]), np.max(np.abs(R - exact))


def test_flat_curvature_quantities_vanish(flat_line):
    G = GeometryCache(flat_line)
    for f in (G.rm, G.omega_curv, G.P, G.S, G.Q, G.V, G.rho, G.scal, G.rc, G.b1, G.b2, G.b,
              G.t_tensor, G.weyl, G.star_scal, G.phi, G.lap_omega, G.weyl_2002):
        assert max_abs(f) == 0.0


def test_conformal_metric_scalar_curvature():
    e32, _ = conformal_scalar_error(32)
    e64, m64 = conformal_scalar_error(64)
    assert e64 <= 1e-8 and m64 <= 1e-8
    assert np.log2(e32 / e64) >= 7.0


def test_chern_scalar_two_traces(family_fd):
    G = GeometryCache(family_fd)
    assert max_abs(G.rho - G._traces["rho_from_S"]) <= 1e-10


def test_b_tensors_symmetric(family_exact):
    G = GeometryCache(family_exact)
    for b in (G.b1, G.b2, G.b):
        assert max_abs(b - ein("ij->ji", b)) <= 1e-12


def test_b2_is_tau_norm_times_metric(family_exact):
    G = GeometryCache(family_exact)
    b2 = G.b_from_tau["b2"]
    rel = max_abs(b2 - scal_times(G.tau_norm2, family_exact.g)) / max_abs(b2)
    assert rel <= 1e-9


def test_curvature_ids_exact(family_exact):
    ids = {"RM-SYM", "OMEGA-SYM", "RHO-TRACES", "BIANCHI-1", "T-SYM", "T-GAP", "RM-OMEGA",
           "RC-OMEGA", "V-TRACED", "RC-ID", "SCAL-ID", "KI", "V-2002", "P-2002", "RC-2002",
           "RSTAR", "WEYL-TRACEFREE", "B-FORMS", "B-TRACE", "B-NORMS", "B2-METRIC", "PHI-ID",
           "LAP-OMEGA", "TAU-RM", "GRAY", "SEKIGAWA-NORMS"}
    rep = run_all(family_exact, selection=ids)
    bad = [r.as_dict() for r in rep.results if r.status != "pass" or r.relative > 1e-9]
    assert not bad


def test_dimension_four_relations_not_applicable_in_six():
    s = conjugation_family(PeriodicGrid(6, (32, 1, 1, 1, 1, 1), 4), eps=0.1, backend=EXACT)
    by = run_all(s, selection={"B-NORMS", "B2-METRIC", "B-FORMS"}).by_id()
    assert by["B-NORMS"].status == "skipped" and "dimension 6" in by["B-NORMS"].reason
    assert by["B-FORMS"].status == "pass"


def test_curvature_ids_converge():
    ids = ["SCAL-ID", "RC-ID", "T-GAP", "RM-OMEGA", "LAP-OMEGA", "RSTAR", "BIANCHI-2",
           "LAP-TAU", "SEKIGAWA"]
    for r in convergence_study({"eps": 0.1}, ids, [32, 64, 128]):
        assert r.status in ("converging", "at-machine-precision"), r.as_dict()
        if r.status == "converging":
            assert r.order >= 3.0


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_random_generators_satisfy_curvature_ids(seed):
    rng = np.random.default_rng(seed)
    s = conjugation_family(PeriodicGrid(4, (32, 1, 1, 1), 4), A=random_generator(rng, 4),
                           eps=0.1, backend=EXACT)
    ids = {"SCAL-ID", "RSTAR", "KI", "PHI-ID", "B-NORMS", "P-2002", "RC-2002", "OMEGA-SYM"}
    rep = run_all(s, selection=ids)
    assert all(r.status == "pass" and r.relative <= 1e-9 for r in rep.results)
