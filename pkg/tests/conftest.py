import numpy as np
import pytest

from qrisk.dynprog.grid import DPConfig
from qrisk.dynprog.solver import backward_solve
from qrisk.model import TwoLevelParams, two_level_model

ACCEPTANCE_LINES: dict[int, str] = {}

SMALL_GRID = DPConfig(n_x=21, n_y=21, n_z=21, dt_dp=5e-3, n_u=17)


@pytest.fixture
def params():
    return TwoLevelParams()


@pytest.fixture
def spec(params):
    return two_level_model(params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_rs():
    """Risk-sensitive solve on the 21^3 lattice over a short horizon."""
    return backward_solve(TwoLevelParams(T=1.0), SMALL_GRID, "rs")


@pytest.fixture(scope="session")
def small_rn():
    return backward_solve(TwoLevelParams(T=1.0), SMALL_GRID, "rn")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
