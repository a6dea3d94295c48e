import os

import pytest
from hypothesis import HealthCheck, settings

from stockloan.model import ModelParams

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

# one representative parameter set per regime
CASES = {
    "Case0": ModelParams(a=0.12, b=0.09, gamma=0.07, r=0.02),
    "Case1": ModelParams(a=0.03, b=0.01, gamma=0.10, r=0.05),
    "Case2": ModelParams(a=0.15, b=0.06, gamma=0.10, r=0.02),
    "Case3": ModelParams(a=0.15, b=0.01, gamma=0.08, r=0.03),
    "Case4": ModelParams(a=0.22, b=0.02, gamma=0.10, r=0.02),
}

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
