import contextlib
import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (title, passed, detail), filled by the acceptance tests
VERDICTS = {}


class _Verdict:
    def __init__(self):
        self.ok = False
        self.detail = ""


@contextlib.contextmanager
def _criterion(number, title):
    v = _Verdict()
    start = time.perf_counter()
    try:
        yield v
    except Exception as e:
        v.ok = False
        v.detail = v.detail or f"{type(e).__name__}: {e}".splitlines()[0]
        raise
    finally:
        VERDICTS[number] = (title, v.ok, f"{v.detail} [{time.perf_counter() - start:.1f} s]")


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        title, ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {n:>2}. {title}: {detail}")
