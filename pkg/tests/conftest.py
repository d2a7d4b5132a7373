import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=1000, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = marker.args[0]
    if rep.when in ("setup", "call"):
        prev = _criteria.get(num, (True, marker.args[1], 0.0))
        _criteria[num] = (prev[0] and not rep.failed, marker.args[1], prev[2] + rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        ok, title, secs = _criteria[num]
        tr.write_line(f"AC{num:>2} {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f}s)")
