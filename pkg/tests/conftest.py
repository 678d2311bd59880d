import numpy as np
import pytest

from presstyle.numerics import backend


@pytest.fixture(params=backend.available())
def kernels(request):
    """Run the test once per available kernel backend."""
    with backend.using(request.param) as k:
        yield k


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
