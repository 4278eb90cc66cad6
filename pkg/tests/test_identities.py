import json
import math

import pytest

from akflow.fields import PeriodicGrid
from akflow.identities import (JET_CLASSES, REGISTRY, REGISTRY_VERSION, convergence_study,
                               identity, run_all)
from akflow.structure import EXACT, FD, conjugation_family, flat_kahler

# one id per identity the registry must cover, grouped by what they check
REQUIRED = {
    # structure compatibility
    "J-SQUARED", "G-COMPAT", "OMEGA-FROM-G", "G-FROM-OMEGA", "OMEGA-INVERSE", "D-OMEGA",
    # connection
    "LC-METRIC", "CHERN-PARALLEL", "TAU-11", "N-8TAU", "THETA-N", "N-DOMEGA", "TAU-CYCLIC",
    "TAU-TYPE", "TAUTAU-11", "TAU-TRACE", "COMMUTATOR",
    # curvature
    "RM-SYM", "OMEGA-SYM", "RHO-TRACES", "BIANCHI-1", "BIANCHI-2", "P-BIANCHI", "T-SYM",
    "T-GAP", "RM-OMEGA", "RC-OMEGA", "V-TRACED", "RC-ID", "SCAL-ID", "KI", "V-2002", "P-2002",
    "RC-2002", "B-FORMS", "B-TRACE", "B-NORMS", "B2-METRIC", "LAP-TAU", "TAU-RM", "LAP-J",
    # Sekigawa group
    "RSTAR", "PHI-ID", "LAP-OMEGA", "WEYL-TRACEFREE", "SEKIGAWA", "SEKIGAWA-DIV",
    # flow
    "PROP-A", "GDOT-FORMS",
}


def test_registry_covers_required_ids():
    assert REQUIRED <= set(REGISTRY)
    assert len(REGISTRY) >= 30


def test_registry_entries_are_well_formed():
    for i, chk in REGISTRY.items():
        assert chk.id == i
        assert chk.description and chk.formula
        assert chk.jet_class in JET_CLASSES
        assert FD in chk.backends
        assert (EXACT in chk.backends) == (chk.jet_class != "third_order")


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        identity("SCAL-ID", "dup", "x", "algebraic")(lambda G: None)


def test_flat_torus_every_backend(flat_line):
    exact_flat = flat_kahler(flat_line.grid, backend=EXACT)
    for s, backend in ((flat_line, FD), (exact_flat, EXACT), (exact_flat, FD)):
        rep = run_all(s, backend)
        for r in rep.results:
            if r.status != "skipped":
                assert r.max_abs <= 1e-12, r.as_dict()
        assert rep.passed


def test_exact_suite(family_exact):
    rep = run_all(family_exact, EXACT)
    for r in rep.results:
        if REGISTRY[r.id].jet_class == "third_order":
            assert r.status == "skipped" and r.reason == "needs third-order jets"
        else:
            assert r.status == "pass" and r.relative <= 1e-9, r.as_dict()


def test_fd_report_is_finite(family_fd):
    rep = run_all(family_fd, FD)
    assert len(rep.results) == len(REGISTRY)
    for r in rep.results:
        if r.status != "skipped":
            assert math.isfinite(r.max_abs) and math.isfinite(r.relative)


def test_run_all_is_deterministic_and_parallel_safe(family_exact):
    a = json.dumps(run_all(family_exact).as_dict(), sort_keys=True)
    b = json.dumps(run_all(family_exact).as_dict(), sort_keys=True)
    c = json.dumps(run_all(family_exact, workers=4).as_dict(), sort_keys=True)
    assert a == b == c


def test_selection_errors(family_exact):
    with pytest.raises(KeyError):
        run_all(family_exact, selection={"NOT-AN-ID"})
    with pytest.raises(ValueError):
        run_all(conjugation_family(PeriodicGrid(4, (16, 1, 1, 1), 4)), EXACT)


def test_convergence_examples():
    r = convergence_study({"eps": 0.1}, ["SCAL-ID", "BIANCHI-2"], [32, 64, 128])
    for x in r:
        assert x.status == "converging" and x.order >= 3.0, x.as_dict()
    flat = convergence_study({"example": "flat"}, ["SCAL-ID"], [32, 64, 128])[0]
    assert flat.status == "at-machine-precision"


def test_convergence_needs_doubling():
    with pytest.raises(ValueError):
        convergence_study({"eps": 0.1}, ["SCAL-ID"], [32, 48])
    with pytest.raises(ValueError):
        convergence_study({"eps": 0.1}, ["SCAL-ID"], [32])


def test_report_carries_version(family_exact):
    assert isinstance(REGISTRY_VERSION, str)
    d = run_all(family_exact, selection={"KI"}).as_dict()
    assert d["passed"] and d["results"][0]["id"] == "KI"
