import numpy as np
import pytest

from monoldp import TimeGrid, default_initial_state, heat_model


@pytest.fixture(scope="session")
def heat():
    return heat_model()


@pytest.fixture(scope="session")
def x0_heat(heat):
    return default_initial_state(heat.basis)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture(scope="session")
def grid():
    return TimeGrid(1.0, 1000)


@pytest.fixture(scope="session")
def acceptance_log(request):
    lines = request.config.stash.setdefault(_KEY, [])
    return lines


_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)
