"""Geographically weighted regression with a fixed Gaussian kernel."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .dataset import Dataset
from .errors import ParameterError, SingularFitError

RIDGE_SCALE = 1e-8
_CHUNK = 64


@dataclass(frozen=True)
class GwrCoefficients:
    B: np.ndarray  # n x (p+1), intercept first
    bandwidth: float
    kernel: str = "gaussian"

    def __post_init__(self):
        if not np.isfinite(self.B).all():
            raise SingularFitError("non-finite local coefficients")
        if not self.bandwidth > 0:
            raise ParameterError("bandwidth must be positive")

    def to_csv(self, path, ids, feature_names):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["id", "beta_intercept", *(f"beta_{f}" for f in feature_names)])
            for i, row in zip(ids, self.B):
                out.writerow([i, *(repr(float(v)) for v in row)])


def kernel_weights(locations, anchor: int, bandwidth: float) -> np.ndarray:
    if not bandwidth > 0:
        raise ParameterError("bandwidth must be positive")
    locations = np.asarray(locations, dtype=float)
    d2 = ((locations - locations[anchor]) ** 2).sum(axis=1)
    return np.exp(-d2 / (2.0 * bandwidth ** 2))


def default_bandwidth(locations) -> float:
    """Median of the nonzero pairwise location distances."""
    d = pdist(np.asarray(locations, dtype=float))
    d = d[d > 0]
    if d.size == 0:
        raise ParameterError("all locations coincide; no default bandwidth")
    return float(np.median(d))


def design_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X])


def _solve_local(A, b, anchors):
    """Solve a stack of normal-equation systems, ridging the singular ones."""
    out = np.empty(b.shape)
    q = A.shape[1]
    for k in range(A.shape[0]):
        Ak = A[k]
        try:
            # cond check catches numerically singular systems that solve() accepts
            if np.linalg.cond(Ak) > 1e12:
                raise np.linalg.LinAlgError
            out[k] = np.linalg.solve(Ak, b[k])
        except np.linalg.LinAlgError:
            ridge = RIDGE_SCALE * np.trace(Ak) / q
            try:
                if not ridge > 0:
                    raise np.linalg.LinAlgError
                out[k] = np.linalg.solve(Ak + ridge * np.eye(q), b[k])
            except np.linalg.LinAlgError:
                raise SingularFitError(f"singular local system at anchor {anchors[k]}",
                                       anchor=int(anchors[k])) from None
        if not np.isfinite(out[k]).all():
            raise SingularFitError(f"singular local system at anchor {anchors[k]}",
                                   anchor=int(anchors[k]))
    return out


def _local_fits(Z, y, locations, bandwidth, leave_one_out=False):
    n, q = Z.shape
    B = np.empty((n, q))
    for start in range(0, n, _CHUNK):
        anchors = np.arange(start, min(n, start + _CHUNK))
        d2 = ((locations[anchors, None, :] - locations[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-d2 / (2.0 * bandwidth ** 2))
        if leave_one_out:
            w[np.arange(len(anchors)), anchors] = 0.0
        Zw = w[:, :, None] * Z[None, :, :]
        A = np.einsum("cnq,nr->cqr", Zw, Z)
        b = np.einsum("cnq,n->cq", Zw, y)
        B[anchors] = _solve_local(A, b, anchors)
    return B


def fit_gwr_arrays(X, y, locations, bandwidth: float) -> GwrCoefficients:
    if not bandwidth > 0:
        raise ParameterError("bandwidth must be positive")
    Z = design_matrix(X)
    B = _local_fits(Z, np.asarray(y, dtype=float), np.asarray(locations, dtype=float),
                    float(bandwidth))
    return GwrCoefficients(B=B, bandwidth=float(bandwidth))


def fit_gwr(dataset: Dataset, bandwidth: float | None = None) -> GwrCoefficients:
    """Local coefficients at every sample location.

    Regressors are the dataset's (standardized) feature columns plus an
    intercept; kernel distances use the coordinates in original units.
    """
    locations = dataset.locations()
    if bandwidth is None:
        bandwidth = default_bandwidth(locations)
    return fit_gwr_arrays(dataset.X, dataset.y, locations, bandwidth)


def loo_rmse(dataset: Dataset, bandwidth: float) -> float:
    Z = design_matrix(dataset.X)
    B = _local_fits(Z, dataset.y, dataset.locations(), float(bandwidth), leave_one_out=True)
    pred = (Z * B).sum(axis=1)
    return float(np.sqrt(np.mean((dataset.y - pred) ** 2)))


def select_bandwidth(dataset: Dataset, grid) -> float:
    """Grid value with the lowest leave-one-out RMSE; ties go to the smaller bandwidth."""
    grid = sorted(float(b) for b in grid)
    if not grid:
        raise ParameterError("bandwidth grid is empty")
    if len(grid) == 1:
        return grid[0]
    best, best_score = None, np.inf
    for b in grid:
        try:
            score = loo_rmse(dataset, b)
        except SingularFitError:
            continue
        if score < best_score:
            best, best_score = b, score
    if best is None:
        raise SingularFitError("every bandwidth candidate produced a singular fit")
    return best
