import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from decohere.phasespace import PhaseGrid

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_grid():
    return PhaseGrid(128, 128, -6.0, 6.0, -8.0, 8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_runs import REPORT
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for n in sorted(REPORT):
            terminalreporter.write_line(REPORT[n])
