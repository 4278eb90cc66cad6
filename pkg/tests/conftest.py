import pytest

from akflow.fields import PeriodicGrid
from akflow.structure import EXACT, conjugation_family, flat_kahler

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _CRITERIA.get(n, (title, True))
        _CRITERIA[n] = (title, prev[1] and rep.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def flat_line():
    return flat_kahler(PeriodicGrid(4, (8, 1, 1, 1), 4))


@pytest.fixture(scope="session")
def family_fd():
    return conjugation_family(PeriodicGrid(4, (64, 1, 1, 1), 4), eps=0.1)


@pytest.fixture(scope="session")
def family_exact():
    return conjugation_family(PeriodicGrid(4, (64, 1, 1, 1), 4), eps=0.1, backend=EXACT)

