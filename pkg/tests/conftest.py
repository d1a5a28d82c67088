import re

import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, title, detail)`` then run the checks."""
    entry = {}

    def record(number, title, detail=""):
        entry.update(number=number, title=title, detail=detail)

    yield record
    if entry:
        rep = getattr(request.node, "rep_call", None)
        entry["passed"] = bool(rep and rep.passed)
        ACCEPTANCE[request.node.name] = entry


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def _order(entry):
    label = str(entry["number"])
    return int(re.match(r"\d+", label).group()), label


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(ACCEPTANCE.values(), key=_order):
        status = "PASS" if entry["passed"] else "FAIL"
        line = f"{status}  [{entry['number']}] {entry['title']}"
        if entry["detail"]:
            line += f"  ({entry['detail']})"
        terminalreporter.write_line(line)
