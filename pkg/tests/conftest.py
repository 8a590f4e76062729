import pytest

from app.core.config import settings
from app.model.linearized import solve_mode
from app.model.params import load_parameter_set
from app.model.steady_state import solve_steady_state
from app.numerics.grid import Grid


@pytest.fixture(autouse=True, scope="session")
def _no_progress_bars():
    settings.progress = False
    yield


@pytest.fixture(scope="session")
def gap_set():
    return load_parameter_set("gap_set")


@pytest.fixture(scope="session")
def mode_set():
    return load_parameter_set("mode_set")


@pytest.fixture(scope="session")
def equal_beta_set():
    return load_parameter_set("equal_beta_set")


@pytest.fixture(scope="session")
def steady_gap(gap_set):
    """gap_set at eps = 0.01 on the default 401-node grid."""
    return solve_steady_state(gap_set, Grid(gap_set.epsilon, 401))


@pytest.fixture(scope="session")
def modes_gap(steady_gap):
    return {n: solve_mode(n, steady_gap) for n in (0, 1, 2)}
