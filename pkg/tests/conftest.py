import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sacldp.field import Mode, ModeSet
from sacldp.grid import SpaceGrid, TimeGrid

settings.register_profile("sacldp", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sacldp")


@pytest.fixture(scope="session")
def space():
    return SpaceGrid.from_spacing((0.0,), (1.0,), 1.0 / 128)


@pytest.fixture(scope="session")
def short_times():
    return TimeGrid(0.02, 200)


@pytest.fixture(scope="session")
def default_spec():
    return ModeSet.default()


def plateau_constant(amplitude, lower=0.05, upper=0.95, plateau=0.8):
    """One constant mode whose envelope is flat on most of ``(lower, upper)``."""
    return ModeSet((0.0,), (1.0,), (Mode("zero"), Mode("constant", amplitude, support=((lower,), (upper,)),
                                                         plateau=plateau)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, filled by test_acceptance.py and echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
