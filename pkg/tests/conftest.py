"""Collects one verdict line per acceptance criterion and prints them at the end."""
import pytest

_VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Call ``verdict(number, title, detail)`` before asserting."""
    def record(number, title, detail=""):
        _VERDICTS[request.node.nodeid] = [number, title, detail, None]
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.nodeid in _VERDICTS and rep.when == "call":
        _VERDICTS[item.nodeid][3] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title, detail, ok in sorted(_VERDICTS.values(), key=lambda v: v[0]):
        status = {True: "PASS", False: "FAIL", None: "ERROR"}[ok]
        tr.write_line(f"criterion {number}: {status}  {title}" + (f"  [{detail}]" if detail else ""))
