import time

import pytest

RESULTS: dict[int, tuple[bool, str, float]] = {}


class Criterion:
    def __init__(self, number: int):
        self.number = number
        self.t0 = time.perf_counter()

    def record(self, passed: bool, detail: str) -> None:
        RESULTS[self.number] = (bool(passed), detail, time.perf_counter() - self.t0)


@pytest.fixture
def criterion(request):
    """``criterion(n)`` starts the clock for acceptance criterion ``n``."""
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail, secs = RESULTS[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({secs:.1f}s) {detail}")
