import os

# one BLAS thread: the timing budgets assume a single core and it keeps runs bit-reproducible
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from rsnet.graph import SkeletonTopology, load_topology, path_graph


def random_connected_topology(rng: np.random.Generator, n: int, extra_edges: int = 3) -> SkeletonTopology:
    """Random spanning tree plus a few extra edges."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(v))
        edges.add((u, v))
    for _ in range(extra_edges):
        i, j = (int(x) for x in rng.choice(n, size=2, replace=False))
        edges.add((min(i, j), max(i, j)))
    return SkeletonTopology([f"j{i}" for i in range(n)], sorted(edges))


def random_graphs(count: int = 20, seed: int = 2024, max_n: int = 24):
    rng = np.random.default_rng(seed)
    return [random_connected_topology(rng, int(rng.integers(2, max_n + 1)),
                                      int(rng.integers(0, 6))) for _ in range(count)]


@pytest.fixture
def p3():
    return path_graph(3)


@pytest.fixture(scope="session")
def h36m17():
    return load_topology("h36m17")


@pytest.fixture(scope="session")
def h36m16():
    return load_topology("h36m16")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2} {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
