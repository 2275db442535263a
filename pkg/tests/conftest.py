import numpy as np
import pytest

from bayespath.graph_data import Dataset, GeneNetwork, PathwayMembership


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_membership():
    # A = {g0..g3}, B = {g2..g5}: genes g2 and g3 are shared
    return PathwayMembership.from_sets({"A": ["g0", "g1", "g2", "g3"],
                                        "B": ["g2", "g3", "g4", "g5"]})


@pytest.fixture
def small_network(small_membership):
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]
    return GeneNetwork.from_edges(6, edges, small_membership.gene_ids)


@pytest.fixture
def small_data():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20, 6))
    y = 0.4 * X[:, 1] - 0.3 * X[:, 4] + rng.standard_normal(20)
    return Dataset.from_raw(X, y)


def random_instance(rng, K=None, p=None):
    """Random membership with no empty pathway and no orphan gene."""
    K = int(rng.integers(1, 5)) if K is None else K
    p = int(rng.integers(2, 7)) if p is None else p
    S = rng.random((K, p)) < 0.5
    for k in range(K):
        if not S[k].any():
            S[k, rng.integers(p)] = True
    for j in range(p):
        if not S[:, j].any():
            S[rng.integers(K), j] = True
    return PathwayMembership(tuple(f"P{k}" for k in range(K)),
                             tuple(f"g{j}" for j in range(p)), S)


def random_graph(rng, p, density=0.35):
    A = np.triu(rng.random((p, p)) < density, 1)
    return GeneNetwork(A | A.T)


def connected_graph(rng, p, extra_edges):
    """Random spanning tree plus ``extra_edges`` random chords."""
    A = np.zeros((p, p), bool)
    order = rng.permutation(p)
    for i in range(1, p):
        a, b = order[i], order[rng.integers(i)]
        A[a, b] = A[b, a] = True
    for _ in range(extra_edges):
        a, b = rng.choice(p, 2, replace=False)
        A[a, b] = A[b, a] = True
    return A


# lines collected by the acceptance suite and repeated in the session summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
