import pytest
from hypothesis import HealthCheck, settings

from idsutil.synth import random_trace

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion number -> (title, "PASS"/"FAIL", detail); filled by test_acceptance
CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.fixture(scope="session")
def mixed_trace():
    return random_trace(400, seed=7, port0_rate=0.02, ip_options_rate=0.1)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, verdict, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n} {verdict}: {title} ({detail})")
