import math

import pytest
from hypothesis import HealthCheck, settings

from boundarywalk.model import standard_problem

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# b(t) = 1 - t/2, f = exp(-t/2): passage time of Brownian motion is inverse
# Gaussian with mean 2 and shape 1, so E exp(-tau/2) = exp(-kappa) with
# kappa = sqrt(1.25) - 0.5.
KAPPA = math.sqrt(1.25) - 0.5
U00 = math.exp(-KAPPA)


@pytest.fixture(scope="session")
def exp_problem():
    return standard_problem("centered-exponential")


@pytest.fixture(scope="session")
def normal_problem():
    return standard_problem("standard-normal")


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
