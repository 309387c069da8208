import itertools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_results: dict = {}


def _order(key):
    text = str(key)
    digits = "".join(itertools.takewhile(str.isdigit, text))
    return int(digits or 0), text


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "ok": True, "ran": False, "failed": []})
    if call.when == "call" or call.excinfo is not None:
        entry["ran"] = True
        if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
            entry["ok"] = False
            entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results, key=_order):
        r = _results[number]
        if not r["ran"]:
            status = "SKIP"
        else:
            status = "PASS" if r["ok"] else "FAIL"
        line = f"criterion {number}: {status}  {r['title']}"
        if r["failed"]:
            line += f"  (failed: {', '.join(r['failed'])})"
        terminalreporter.write_line(line)
