import time
from contextlib import contextmanager

import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Time a block, record a PASS/FAIL line, and enforce the runtime limit."""

    @contextmanager
    def run(number, title, limit):
        start = time.perf_counter()
        ok = False
        try:
            yield
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            ok = ok and elapsed < limit
            line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {elapsed:7.3f} s (limit {limit} s)  {title}"
            _LINES.append((number, line))
            print(line)
        assert elapsed < limit, f"criterion {number} took {elapsed:.3f} s, limit {limit} s"

    return run


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
