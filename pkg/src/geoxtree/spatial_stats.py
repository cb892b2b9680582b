"""Global Moran's I."""

import numpy as np
from scipy import sparse

from .dataset import Dataset, SpatialWeights
from .errors import ShapeError, ZeroVarianceError


def morans_i(values, weights) -> float:
    """Global Moran's I, ``(N/W) * z'Wz / z'z`` with ``z`` the centred values.

    ``weights`` may be a SpatialWeights or any square (sparse) matrix; no
    row standardization is applied and the result is not clamped to [-1, 1].
    """
    z = np.asarray(values, dtype=float)
    w = weights.matrix if isinstance(weights, SpatialWeights) else sparse.csr_array(weights)
    n = z.shape[0]
    if z.ndim != 1 or w.shape != (n, n):
        raise ShapeError(f"values of length {z.shape} do not match weights {w.shape}")
    if not np.isfinite(z).all():
        raise ShapeError("values must be finite")
    if n == 0 or np.ptp(z) == 0:
        raise ZeroVarianceError("Moran's I is undefined for a constant vector")
    z = z - z.mean()
    denom = float(z @ z)
    total = float(w.sum())
    return float(n / total * (z @ (w @ z)) / denom)


def residual_morans_i(tree, dataset: Dataset, weights) -> float:
    """Moran's I of prediction-minus-target residuals on ``dataset``."""
    residuals = tree.predict(dataset.X) - dataset.y
    # leaf means of equal targets can differ from them by an ulp
    if np.ptp(residuals) <= 1e-12 * max(1.0, float(np.abs(dataset.y).max())):
        raise ZeroVarianceError("residuals are constant")
    return morans_i(residuals, weights)
