"""Similarity networks, their Hadamard consensus, and modularity maximization.

``maximize_modularity`` is a multilevel (Louvain) greedy optimizer: nodes are
moved one at a time to the neighbouring community with the best modularity
gain, communities are collapsed into super-nodes, and the process repeats.
After every aggregation round the partition is re-polished with single-node
moves on the original graph, so the result is always a local optimum under
single-node relabelling. Graphs with at most ``EXACT_MAX_NODES`` nodes are
solved exactly by scoring every set partition.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .errors import DegenerateGeometryError, ShapeError

_TOL = 1e-12
EXACT_MAX_NODES = 8


@dataclass(frozen=True)
class SimilarityNetwork:
    adjacency: sparse.csr_array

    def __post_init__(self):
        a = sparse.csr_array(self.adjacency, dtype=float)
        a.eliminate_zeros()
        if a.shape[0] != a.shape[1]:
            raise ShapeError("adjacency must be square")
        if a.nnz == 0:
            raise DegenerateGeometryError("network has no positive edges")
        if a.data.min() < 0 or a.data.max() > 1 + 1e-12:
            raise ShapeError("similarities must lie in [0, 1]")
        if a.diagonal().any():
            raise ShapeError("similarity networks have a zero diagonal")
        if abs(a - a.T).max() > 1e-12:
            raise ShapeError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self):
        return self.adjacency.shape[0]

    def to_csv(self, path, ids=None):
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["source", "target", "weight"])
            for i, j, w in zip(coo.row[order], coo.col[order], coo.data[order]):
                a, b = (ids[i], ids[j]) if ids is not None else (int(i), int(j))
                out.writerow([a, b, repr(float(w))])


@dataclass(frozen=True)
class CommunityPartition:
    labels: np.ndarray
    q: float
    gamma: float

    @property
    def n_communities(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def to_csv(self, path, ids):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["id", "community"])
            for i, c in zip(ids, self.labels):
                out.writerow([i, int(c)])


def pairwise_distances(rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(-1, 1)
    d = cdist(rows, rows)
    np.fill_diagonal(d, 0.0)
    return d


def distance_to_similarity(D) -> SimilarityNetwork:
    """Gaussian kernel on distances, bandwidth = median positive distance."""
    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ShapeError("distance matrix must be square")
    if (D < 0).any() or np.abs(np.diag(D)).max(initial=0) > 0:
        raise ShapeError("distances must be nonnegative with a zero diagonal")
    if np.abs(D - D.T).max(initial=0) > 1e-9 * max(1.0, D.max(initial=0)):
        raise ShapeError("distance matrix must be symmetric")
    positive = D[D > 0]
    if positive.size == 0:
        raise DegenerateGeometryError("all pairwise distances are zero")
    sigma = float(np.median(positive))
    S = np.exp(-(D ** 2) / (2.0 * sigma ** 2))
    np.fill_diagonal(S, 0.0)
    S = 0.5 * (S + S.T)
    return SimilarityNetwork(sparse.csr_array(S))


def consensus(g1: SimilarityNetwork, g2: SimilarityNetwork, sparsify_k=10) -> SimilarityNetwork:
    """Entrywise product, then keep each node's ``sparsify_k`` strongest edges.

    An edge survives if either endpoint keeps it. ``sparsify_k=None`` keeps
    every positive entry.
    """
    if g1.n != g2.n:
        raise ShapeError(f"networks differ in size ({g1.n} vs {g2.n})")
    P = g1.adjacency.multiply(g2.adjacency).toarray()
    if not (P > 0).any():
        raise DegenerateGeometryError("consensus network has no positive edges")
    n = P.shape[0]
    if sparsify_k is not None and sparsify_k < n - 1:
        k = int(sparsify_k)
        if k < 1:
            raise ShapeError("sparsify_k must be positive")
        # stable sort on negated weights: ties go to the lower column index
        top = np.argsort(-P, axis=1, kind="stable")[:, :k]
        keep = np.zeros_like(P, dtype=bool)
        keep[np.repeat(np.arange(n), k), top.ravel()] = True
        keep |= keep.T
        P = np.where(keep, P, 0.0)
    np.fill_diagonal(P, 0.0)
    return SimilarityNetwork(sparse.csr_array(P))


def _as_matrix(g):
    if isinstance(g, SimilarityNetwork):
        return g.adjacency
    return sparse.csr_array(g, dtype=float)


def modularity_score(g, labels, gamma: float = 1.0) -> float:
    A = _as_matrix(g)
    labels = np.asarray(labels)
    if labels.shape != (A.shape[0],):
        raise ShapeError("labels must have one entry per node")
    two_m = float(A.sum())
    if two_m <= 0:
        raise DegenerateGeometryError("graph has no edge weight")
    _, lab = np.unique(labels, return_inverse=True)
    k = np.asarray(A.sum(axis=1)).ravel()
    coo = A.tocoo()
    inside = float(coo.data[lab[coo.row] == lab[coo.col]].sum())
    tot = np.bincount(lab, weights=k)
    return (inside - gamma * float(tot @ tot) / two_m) / two_m


def _dense_labels(labels):
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=int)
    remap[np.unique(labels)[order]] = np.arange(order.size)
    return remap[labels]


def _move_nodes(A, labels, gamma, two_m, rng):
    """Greedy single-node moves until no move improves modularity.

    ``A`` may carry self-loops (aggregated graphs); they do not affect move gains.
    """
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    k = np.asarray(A.sum(axis=1)).ravel()
    comm = np.array(labels, dtype=int)
    tot = np.bincount(comm, weights=k, minlength=n).astype(float)
    size = np.bincount(comm, minlength=n)
    free = [c for c in range(n) if size[c] == 0]
    moved_any = False
    for _ in range(10_000):
        moved = 0
        for i in rng.permutation(n):
            ci = comm[i]
            ki = k[i]
            lo, hi = indptr[i], indptr[i + 1]
            nb = indices[lo:hi]
            w = data[lo:hi]
            off = nb != i
            nc = comm[nb[off]]
            neigh = np.bincount(nc, weights=w[off], minlength=n)
            tot[ci] -= ki
            size[ci] -= 1
            scale = gamma * ki / two_m
            stay = neigh[ci] - scale * tot[ci]
            tol = _TOL * max(ki, 1e-300)
            best_c = ci
            best_gain = stay
            if nc.size:
                cand = np.flatnonzero(neigh)
                gains = neigh[cand] - scale * tot[cand]
                j = int(np.argmax(gains))  # lowest community id among ties
                if gains[j] > stay + tol:
                    best_c, best_gain = int(cand[j]), float(gains[j])
            if best_gain < -tol and size[ci] > 0:
                # isolating the node beats every neighbouring community
                best_c = free.pop()
            if best_c != ci:
                moved += 1
                if size[ci] == 0:
                    free.append(ci)
            comm[i] = best_c
            tot[best_c] += ki
            size[best_c] += 1
        if not moved:
            break
        moved_any = True
    return _dense_labels(comm), moved_any


def _aggregate(A, labels):
    n, c = A.shape[0], int(labels.max()) + 1
    S = sparse.csr_array((np.ones(n), (np.arange(n), labels)), shape=(n, c))
    return sparse.csr_array(S.T @ A @ S)


@lru_cache(maxsize=None)
def _set_partitions(n):
    """All set partitions of n nodes as restricted growth strings, shape (Bell(n), n)."""
    out = []

    def grow(prefix, k):
        if len(prefix) == n:
            out.append(prefix)
            return
        for c in range(k + 1):
            grow(prefix + (c,), max(k, c + 1))

    grow((), 0)
    return np.array(out, dtype=int).reshape(len(out), n)


def _exact_partition(A, gamma, two_m):
    n = A.shape[0]
    parts = _set_partitions(n)
    dense = A.toarray()
    k = dense.sum(axis=1)
    B = (dense - gamma * np.outer(k, k) / two_m) / two_m
    same = parts[:, :, None] == parts[:, None, :]
    q = same.reshape(len(parts), -1) @ B.ravel()
    # first maximizer in generation order; the single-community partition comes first
    best = int(np.argmax(q >= q.max() - _TOL))
    return parts[best].copy()


def maximize_modularity(g, gamma: float = 1.0, seed: int = 0,
                        exact_max_nodes: int = EXACT_MAX_NODES) -> CommunityPartition:
    A = _as_matrix(g)
    n = A.shape[0]
    two_m = float(A.sum())
    if two_m <= 0:
        raise DegenerateGeometryError("graph has no edge weight")
    if n <= exact_max_nodes:
        labels = _exact_partition(A, gamma, two_m)
        q = modularity_score(A, labels, gamma)
        return CommunityPartition(labels=labels, q=float(q), gamma=float(gamma))
    A = sparse.csr_array(A)
    A.sort_indices()
    rng = np.random.default_rng(seed)
    labels = np.arange(n)
    for _ in range(1000):
        labels, _ = _move_nodes(A, labels, gamma, two_m, rng)
        changed = False
        while True:
            c = int(labels.max()) + 1
            if c == 1:
                break
            G = _aggregate(A, labels)
            G.sort_indices()
            sub, moved = _move_nodes(G, np.arange(c), gamma, two_m, rng)
            if not moved:
                break
            labels = _dense_labels(sub[labels])
            changed = True
        if not changed:
            break
    q = modularity_score(A, labels, gamma)
    single = np.zeros(n, dtype=int)
    q_single = modularity_score(A, single, gamma)
    if q_single > q:
        labels, q = single, q_single
    return CommunityPartition(labels=labels, q=float(q), gamma=float(gamma))
