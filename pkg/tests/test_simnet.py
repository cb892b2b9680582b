import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from geoxtree.errors import DegenerateGeometryError, ShapeError
from geoxtree.simnet import (SimilarityNetwork, consensus, distance_to_similarity,
                             maximize_modularity, modularity_score, pairwise_distances)


def triangles():
    A = np.zeros((6, 6))
    for a, b in [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]:
        A[a, b] = A[b, a] = 1.0
    return A


def q_loops(A, labels, gamma=1.0):
    n = len(A)
    k = A.sum(axis=1)
    two_m = A.sum()
    total = 0.0
    for i in range(n):
        for j in range(n):
            if labels[i] == labels[j]:
                total += A[i, j] - gamma * k[i] * k[j] / two_m
    return total / two_m


def all_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in all_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def brute_best(A, gamma=1.0):
    n = len(A)
    best = -np.inf
    for part in all_partitions(list(range(n))):
        lab = np.empty(n, dtype=int)
        for c, block in enumerate(part):
            lab[block] = c
        best = max(best, q_loops(A, lab, gamma))
    return best


def random_graph(rng, n, density):
    A = np.triu(rng.uniform(0.1, 1.0, size=(n, n)) * (rng.random((n, n)) < density), 1)
    A = A + A.T
    if A.sum() == 0:
        A[0, 1] = A[1, 0] = 1.0
    return A


def test_pairwise_distances():
    d = pairwise_distances([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]])
    assert d[0, 1] == 5.0 and d[1, 2] == 0.0
    rng = np.random.default_rng(0)
    R = rng.normal(size=(4, 3))
    for i, j in itertools.product(range(4), repeat=2):
        assert pairwise_distances(R)[i, j] == pytest.approx(np.sqrt(((R[i] - R[j]) ** 2).sum()))


def test_kernel_closed_form_and_monotone():
    D = pairwise_distances([[0.0], [1.0], [3.0]])  # positive distances 1, 2, 3: median 2
    S = distance_to_similarity(D).adjacency.toarray()
    assert S[0, 2] == pytest.approx(np.exp(-9 / 8))
    assert S[1, 2] == pytest.approx(np.exp(-0.5))  # d = sigma
    assert S[0, 1] > S[1, 2] > S[0, 2]
    np.testing.assert_array_equal(np.diag(S), 0.0)
    S0 = distance_to_similarity(pairwise_distances([[0.0], [0.0], [1.0]])).adjacency.toarray()
    assert S0[0, 1] == 1.0


def test_kernel_errors():
    with pytest.raises(DegenerateGeometryError):
        distance_to_similarity(np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        distance_to_similarity(np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_network_invariants():
    with pytest.raises(ShapeError):
        SimilarityNetwork(sparse.csr_array(np.array([[0.0, 2.0], [2.0, 0.0]])))
    with pytest.raises(ShapeError):
        SimilarityNetwork(sparse.csr_array(np.array([[0.0, 0.5], [0.4, 0.0]])))


def net(A):
    return SimilarityNetwork(sparse.csr_array(np.asarray(A, dtype=float)))


def test_consensus_product_and_identity():
    half = np.full((3, 3), 0.5)
    np.fill_diagonal(half, 0)
    P = consensus(net(half), net(half), None).adjacency.toarray()
    assert P[0, 1] == 0.25
    ones = np.ones((3, 3))
    np.fill_diagonal(ones, 0)
    np.testing.assert_array_equal(consensus(net(half), net(ones), None).adjacency.toarray(), half)


def test_consensus_six_node_fixture():
    rng = np.random.default_rng(1)
    a = np.triu(rng.uniform(size=(6, 6)), 1)
    b = np.triu(rng.uniform(size=(6, 6)), 1)
    a, b = a + a.T, b + b.T
    got = consensus(net(a), net(b), 2).adjacency.toarray()
    prod = a * b
    expect = np.zeros_like(prod)
    for i in range(6):
        for j in np.argsort(-prod[i])[:2]:
            expect[i, j] = expect[j, i] = prod[i, j]
    np.testing.assert_allclose(got, expect)
    assert (got > 0).sum(axis=1).min() >= 2


def test_consensus_errors():
    with pytest.raises(ShapeError):
        consensus(net(triangles() / 2), net(np.zeros((2, 2)) + [[0, 1], [1, 0]]))
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1
    b = np.zeros((3, 3))
    b[1, 2] = b[2, 1] = 1
    with pytest.raises(DegenerateGeometryError):
        consensus(net(a), net(b))


def test_modularity_fixtures():
    A = triangles()
    assert modularity_score(A, [0, 0, 0, 1, 1, 1]) == 0.5
    assert modularity_score(A, np.zeros(6)) == pytest.approx(0.0, abs=1e-15)
    assert modularity_score(A, np.arange(6), gamma=0.0) == 0.0
    with pytest.raises(DegenerateGeometryError):
        modularity_score(np.zeros((3, 3)), [0, 1, 2])


def test_modularity_matches_loops_and_relabelling():
    rng = np.random.default_rng(2)
    A = random_graph(rng, 12, 0.4)
    lab = rng.integers(0, 4, size=12)
    assert modularity_score(A, lab, 0.7) == pytest.approx(q_loops(A, lab, 0.7), abs=1e-12)
    perm = np.array([3, 0, 2, 1])
    assert modularity_score(A, perm[lab], 0.7) == pytest.approx(modularity_score(A, lab, 0.7))
    assert modularity_score(5 * A, lab) == pytest.approx(modularity_score(A, lab))


def test_maximize_two_triangles():
    for exact in (8, 0):  # enumeration and the greedy path
        part = maximize_modularity(triangles(), exact_max_nodes=exact)
        assert part.q == 0.5
        assert len(set(part.labels[:3])) == 1 and len(set(part.labels[3:])) == 1
        assert part.labels[0] != part.labels[3]


def test_complete_graph_stays_whole():
    A = np.ones((10, 10)) - np.eye(10)
    part = maximize_modularity(A)
    assert part.n_communities == 1
    assert part.q == pytest.approx(0.0, abs=1e-12)


def test_bridged_cliques():
    A = np.zeros((10, 10))
    A[:5, :5] = 1
    A[5:, 5:] = 1
    np.fill_diagonal(A, 0)
    A[4, 5] = A[5, 4] = 1
    part = maximize_modularity(A)
    np.testing.assert_array_equal(part.labels, [0] * 5 + [1] * 5)


def test_exhaustive_optimum_small_graphs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 7))
        A = random_graph(rng, n, 0.5)
        part = maximize_modularity(A, seed=0)
        assert part.q == pytest.approx(brute_best(A), abs=1e-12)
        assert part.q == pytest.approx(modularity_score(A, part.labels), abs=1e-12)


def single_move_gain(A, labels, gamma=1.0):
    base = modularity_score(A, labels, gamma)
    best = 0.0
    for i in range(len(A)):
        for c in range(labels.max() + 2):
            trial = labels.copy()
            trial[i] = c
            best = max(best, modularity_score(A, trial, gamma) - base)
    return best


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(9, 40), st.floats(0.5, 1.5))
def test_greedy_result_is_local_maximum(seed, n, gamma):
    A = random_graph(np.random.default_rng(seed), n, 0.25)
    part = maximize_modularity(A, gamma, seed)
    assert single_move_gain(A, part.labels, gamma) <= 1e-10
    assert part.q == pytest.approx(modularity_score(A, part.labels, gamma), abs=1e-12)
    labels = part.labels
    assert set(labels) == set(range(labels.max() + 1))


def test_deterministic_given_seed():
    A = random_graph(np.random.default_rng(4), 60, 0.1)
    a = maximize_modularity(A, seed=7)
    b = maximize_modularity(A, seed=7)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_partition_csv(tmp_path):
    part = maximize_modularity(triangles())
    part.to_csv(tmp_path / "c.csv", list("abcdef"))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("id,") and len(lines) == 7
