import pytest

from polaron_bounds import grid_core as gc
from polaron_bounds import pt_solver as ps

_ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion (printed in the summary)."""
    def record(number: int, passed: bool, detail: str):
        _ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(_ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def radial_grid():
    return gc.log_radial_grid(40.0, 1200)


@pytest.fixture(scope="session")
def pekar():
    return ps.minimize_pekar(1.0, ps.SolverConfig())


@pytest.fixture(scope="session")
def provider():
    return ps.HartreeProvider(ps.SolverConfig())


@pytest.fixture(scope="session")
def hartree_two_sweep():
    nus = (0.0, 1.0, 2.0, 4.0, 8.0)
    return nus, ps.hartree_sweep(2, nus, ps.SolverConfig())
