from __future__ import annotations

import pytest

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, {"title": title, "passed": 0, "xfailed": 0, "failed": 0})
        if hasattr(report, "wasxfail"):
            entry["xfailed"] += 1
        elif report.passed:
            entry["passed"] += 1
        else:
            entry["failed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        if entry["failed"]:
            verdict = "FAIL"
        elif entry["xfailed"]:
            verdict = "PARTIAL"
        else:
            verdict = "PASS"
        counts = f"{entry['passed']} passed, {entry['xfailed']} expected failures, {entry['failed']} failed"
        terminalreporter.write_line(f"criterion {number:2d}  {verdict:7s}  {entry['title']} ({counts})")
