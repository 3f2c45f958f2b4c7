import numpy as np
import pytest

from lsgnn.graph import build_graph

# one line per acceptance criterion, echoed after the run summary so the
# verdicts survive output capture
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


def random_edges(n, p, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < p
    i, j = np.nonzero(np.triu(mask, k=1))
    return np.column_stack([i, j])


@pytest.fixture
def path4():
    # 0 - 1 - 2 - 3
    return build_graph(np.array([[0, 1], [1, 2], [2, 3]]), 4)


@pytest.fixture
def triangle():
    return build_graph(np.array([[0, 1], [1, 2], [0, 2]]), 3)


@pytest.fixture
def star5():
    # hub 0 with leaves 1..4
    return build_graph(np.array([[0, i] for i in range(1, 5)]), 5)


@pytest.fixture
def random_graph():
    def make(n=12, p=0.3, seed=0, extra=0):
        edges = random_edges(n, p, seed)
        return build_graph(edges, n + extra), edges

    return make
