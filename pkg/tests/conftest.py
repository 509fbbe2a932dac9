import pytest

from mpamp.model import Prior
from mpamp.sevo import ProblemParams


@pytest.fixture(scope="session")
def prior():
    return Prior(0.1)


@pytest.fixture(scope="session")
def ref_params(prior):
    # kappa=0.4, P=100, noise variance 1/400
    return ProblemParams(prior, 0.4, 1 / 400, 100)


@pytest.fixture(scope="session")
def small_params(prior):
    return ProblemParams(prior, 0.4, 1 / 400, 4)


# acceptance verdict lines, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
