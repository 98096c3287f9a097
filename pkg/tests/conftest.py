import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("bflow", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("bflow")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "SUMMARY", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
