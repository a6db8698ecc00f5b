"""Collects one line per acceptance criterion and prints them at the end of the run."""

import pytest

_RESULTS: dict[int, list] = {}


class CriterionLog:
    def __init__(self, number: int):
        self.number = number

    def note(self, text: str):
        _RESULTS.setdefault(self.number, [None, []])[1].append(text)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("acceptance")
    return CriterionLog(marker.args[0])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    for kw in report.keywords:
        if kw.startswith("criterion_"):
            n = int(kw.split("_")[1])
            entry = _RESULTS.setdefault(n, [None, []])
            ok = report.passed
            entry[0] = ok if entry[0] is None else (entry[0] and ok)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m:
            item.keywords[f"criterion_{m.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, notes = _RESULTS[n]
        status = "PASS" if ok else ("FAIL" if ok is False else "NOT RUN")
        tr.write_line(f"criterion {n:2d}: {status}  " + "; ".join(notes))
