import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("asdlab", max_examples=40, deadline=None)
settings.load_profile("asdlab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
