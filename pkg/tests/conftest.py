import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_CRITERIA = []


@pytest.fixture(scope="session")
def criteria_log():
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)

# manifests stamp this instead of the wall clock, so reruns compare byte for byte
os.environ.setdefault("SOURCE_DATE_EPOCH", "1700000000")
