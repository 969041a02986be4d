import numpy as np
import pytest

from wassreg.graph import build_grid_graph

ACCEPTANCE_LINES = []


def record(criterion, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path3():
    return build_grid_graph(1, 3, 1)


@pytest.fixture
def pair():
    return build_grid_graph(1, 2, 1)
