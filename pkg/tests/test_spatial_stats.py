import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from geoxtree.dataset import Dataset, knn_weights
from geoxtree.errors import ShapeError, ZeroVarianceError
from geoxtree.spatial_stats import morans_i, residual_morans_i
from geoxtree.tree import AxisSplit, GeoTree


def moran_loops(x, W):
    n = len(x)
    m = sum(x) / n
    num = 0.0
    total = 0.0
    for i in range(n):
        for j in range(n):
            num += W[i][j] * (x[i] - m) * (x[j] - m)
            total += W[i][j]
    den = sum((v - m) ** 2 for v in x)
    return n / total * num / den


def four_cycle():
    return np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)


def test_checkerboard_cycle_is_minus_one():
    assert abs(morans_i([1.0, -1.0, 1.0, -1.0], four_cycle()) + 1.0) < 1e-12


def test_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        locs = rng.uniform(size=(50, 2))
        x = rng.normal(size=50)
        w = knn_weights(locs, 5)
        assert abs(morans_i(x, w) - moran_loops(x, w.matrix.toarray())) < 1e-12


def test_smooth_surface_is_positive():
    g = np.array([[i, j] for i in range(10) for j in range(10)], dtype=float)
    assert morans_i(g[:, 0] + g[:, 1], knn_weights(g, 4)) > 0.5


def test_constant_raises():
    with pytest.raises(ZeroVarianceError):
        morans_i(np.ones(4), four_cycle())


def test_shape_errors():
    with pytest.raises(ShapeError):
        morans_i(np.arange(3.0), four_cycle())
    with pytest.raises(ShapeError):
        morans_i([1.0, np.nan, 0.0, 2.0], four_cycle())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100), st.floats(0.01, 100),
       st.floats(0.01, 100))
def test_invariances(seed, shift, scale, wscale):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20)
    W = sparse.random(20, 20, density=0.3, random_state=seed, format="csr")
    W.setdiag(0)
    W.data[:] = rng.uniform(0.1, 1.0, size=W.data.size)
    base = morans_i(x, W)
    # affine maps of the values and scaling of the weights leave I unchanged
    assert morans_i(shift + scale * x, W) == pytest.approx(base, abs=1e-9)
    assert morans_i(x, wscale * W) == pytest.approx(base, abs=1e-9)
    # symmetrizing the weights does not change the quadratic form
    assert morans_i(x, (W + W.T) / 2) == pytest.approx(base, abs=1e-9)


def _dataset(locs, y):
    X = np.column_stack([locs, np.zeros(len(y))])
    return Dataset(("x", "y", "a"), (0, 1), X, y, tuple(map(str, range(len(y)))))


def test_residuals_of_a_single_leaf_follow_the_target():
    locs = np.array([[i, 0.0] for i in range(8)])
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    ds = _dataset(locs, y)
    w = knn_weights(locs, 1)
    leaf = GeoTree.single_leaf(y, 3)
    assert residual_morans_i(leaf, ds, w) == pytest.approx(morans_i(-y, w))


def test_perfect_fit_has_undefined_residual_i():
    locs = np.array([[i, 0.0] for i in range(8)])
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1], dtype=float)
    stump = GeoTree.single_leaf(y, 3).with_split(0, AxisSplit(0, 3.5), 0.0, 4, 1.0, 4)
    with pytest.raises(ZeroVarianceError):
        residual_morans_i(stump, _dataset(locs, y), knn_weights(locs, 1))
