import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "passed": True, "ran": False, "detail": ""})
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed:
        entry["passed"] = False
        entry["detail"] = str(rep.longrepr).strip().splitlines()[-1][:160] if rep.longrepr else ""
    if rep.skipped:
        entry["passed"] = False
        entry["detail"] = "skipped"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "PASS" if e["passed"] and e["ran"] else "FAIL"
        line = f"criterion {n:2d} [{status}] {e['title']}"
        if status == "FAIL" and e["detail"]:
            line += f" -- {e['detail']}"
        terminalreporter.write_line(line)
