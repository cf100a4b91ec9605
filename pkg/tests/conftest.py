import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ringsim.script import SCRIPTS_DIR  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.fixture
def scripts_dir():
    return Path(SCRIPTS_DIR)


@pytest.fixture
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    n, title = marker
    entry = _CRITERIA.setdefault(n, {"title": title, "outcomes": [], "details": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append((report.nodeid.split("::")[-1], report.outcome, report.when))
    if report.when == "call":
        entry["details"] += [v for k, v in report.user_properties if k == "detail"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        outs = e["outcomes"]
        failed = [name for name, o, _ in outs if o == "failed"]
        skipped = [name for name, o, _ in outs if o == "skipped"]
        ran = [name for name, o, w in outs if o == "passed" and w == "call"]
        if failed:
            status = "FAIL"
        elif ran:
            status = "PASS"
        else:
            status = "SKIP"
        note = ""
        if failed:
            note = f" (failed: {', '.join(failed)})"
        elif skipped:
            note = f" (skipped: {', '.join(skipped)})"
        details = list(dict.fromkeys(e["details"]))
        if len(details) > 3:
            details = details[:3] + [f"{len(details) - 3} more"]
        detail = f" [{'; '.join(details)}]" if details else ""
        tr.write_line(f"criterion {n} {e['title']}: {status}{note}{detail}")


def cpu_count():
    return os.cpu_count() or 1
