from importlib.resources import files

import numpy as np
import pytest

from mstcar.covariance import CovarianceSpec
from mstcar.graph import build_graph

DATA_DIR = files("mstcar") / "data"


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T / n + 0.5 * np.eye(n))


def random_spec(rng, n_time, n_groups, rho_max=0.95):
    g = np.array([random_spd(rng, n_groups) for _ in range(n_time)])
    return CovarianceSpec(g, rng.uniform(0.05, rho_max, n_groups),
                          rng.uniform(0.5, 2.0, n_groups))


def random_connected_edges(rng, n):
    """Random spanning tree plus a few extra edges (1-based)."""
    edges = [(int(rng.integers(0, i)) + 1, i + 1) for i in range(1, n)]
    for _ in range(n // 2):
        a, b = rng.choice(n, 2, replace=False)
        edges.append((int(a) + 1, int(b) + 1))
    return edges


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def square_graph():
    """4-cycle plus one diagonal."""
    return build_graph(4, [(1, 2), (2, 3), (3, 4), (4, 1), (1, 3)])


@pytest.fixture
def path3():
    return build_graph(3, [(1, 2), (2, 3)])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
