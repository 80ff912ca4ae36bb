import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    entry = _results.setdefault(n, {"title": title, "ok": True, "notes": []})
    if report.when == "call" or report.failed or report.skipped:
        if hasattr(report, "wasxfail") or report.failed or report.skipped:
            entry["ok"] = False
            reason = getattr(report, "wasxfail", "") or report.longreprtext.splitlines()[-1:]
            entry["notes"].append(reason if isinstance(reason, str) else " ".join(reason))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        e = _results[n]
        line = f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if not e["ok"] and e["notes"]:
            line += f"  ({e['notes'][0][:160]})"
        terminalreporter.write_line(line)
