import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_results: dict = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or report.failed:
        n, title = crit
        entry = _results.setdefault(n, {"title": title, "ok": True, "details": []})
        entry["ok"] &= report.passed
        detail = dict(report.user_properties).get("detail")
        if detail and detail not in entry["details"]:
            entry["details"].append(detail)
        if report.failed and report.when != "call":
            entry["details"].append(f"{report.when} error")


@pytest.fixture(autouse=True)
def _criterion_tag(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", tuple(marker.args))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        r = _results[n]
        line = f"criterion {n} {'PASS' if r['ok'] else 'FAIL'}  {r['title']}"
        if r["details"]:
            line += "  | " + "; ".join(r["details"])
        terminalreporter.write_line(line)
