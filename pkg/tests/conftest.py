import time

import pytest

_RESULTS = []


class CriterionRecorder:
    """Collects one pass/fail line per acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.detail = ""
        self.status = "FAIL"
        self.start = time.perf_counter()

    def check(self, ok, detail=""):
        self.detail = detail
        self.status = "PASS" if ok else "FAIL"
        return ok

    def skip(self, detail):
        self.status, self.detail = "SKIP", detail

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


@pytest.fixture
def criterion():
    made = []

    def make(number, title):
        rec = CriterionRecorder(number, title)
        made.append(rec)
        return rec

    yield make
    for rec in made:
        _RESULTS.append((rec.number, rec.title, rec.status, rec.detail, rec.elapsed))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail, elapsed in sorted(_RESULTS):
        terminalreporter.write_line(f"criterion {number} [{status}] {title}: {detail} ({elapsed:.1f} s)")
