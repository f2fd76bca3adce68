import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion.

    Usage: ``criterion("1", "uniform table", detail)`` before asserting; the
    outcome is filled in from the test report.
    """
    def record(key, title, detail=""):
        _CRITERIA[request.node.nodeid] = [key, title, detail, None]

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _CRITERIA.get(item.nodeid)
    if entry is None or rep.when not in ("call", "setup"):
        return
    if rep.when == "setup" and not rep.failed:
        return
    if hasattr(rep, "wasxfail"):
        entry[3] = "FAIL (expected, see decisions ledger)" if rep.skipped else "PASS (unexpected)"
    else:
        entry[3] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    rows = sorted(_CRITERIA.values(), key=lambda e: (len(e[0].rstrip("abcdefgh")), e[0]))
    for key, title, detail, verdict in rows:
        line = f"criterion {key:<3} {verdict or 'NOT RUN':<8} {title}"
        if detail:
            line += f" | {detail}"
        terminalreporter.write_line(line)
