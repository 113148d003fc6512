import hypothesis
import numpy as np
import pytest

from helpers import make_theta
from psmlik.model import PiecewiseDensity

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

# filled by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def uniform_density():
    return PiecewiseDensity(np.linspace(0.0, 2.0, 11), np.full(10, 0.1))


@pytest.fixture
def theta():
    return make_theta()
