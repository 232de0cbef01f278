import os
import warnings

import pytest
from hypothesis import HealthCheck, settings

from hyperstep.model import EnsembleGrid
from hyperstep.systems import example1_continuum

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_grid():
    return EnsembleGrid(nx=33, ne=10, T=5.0, n_out=51)


@pytest.fixture(scope="session")
def ex1_small(small_grid):
    return example1_continuum(small_grid)


@pytest.fixture(scope="session")
def ex1_small_kernels(ex1_small):
    from hyperstep.kernels import solve_continuum_kernels_sa

    return solve_continuum_kernels_sa(ex1_small, workers=1)


@pytest.fixture(autouse=True)
def _quiet_collocation():
    from hyperstep.kernels import CollocationWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CollocationWarning)
        yield
