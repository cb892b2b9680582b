from dataclasses import replace

import numpy as np
import pytest
from scipy import sparse

from geoxtree.dataset import Dataset, knn_weights
from geoxtree.errors import ParameterError
from geoxtree.induction import (GainContext, TreeConfig, build_context, enumerate_candidates,
                                evaluate_gain, grow_tree, local_mse_gain, mse_gain)
from geoxtree.simnet import SimilarityNetwork
from geoxtree.tree import AxisSplit, GeoTree, goes_left

from test_simnet import brute_best
from test_spatial_stats import moran_loops
from test_treeshap import oracle as shap_oracle


def dataset(X, y):
    X = np.asarray(X, dtype=float)
    names = tuple(f"c{j}" for j in range(X.shape[1]))
    return Dataset(names, (0, 1), X, np.asarray(y, dtype=float),
                   tuple(str(i) for i in range(X.shape[0])))


def test_config_presets_and_validation():
    assert TreeConfig.for_model("dt").split_kinds == ("axis",)
    assert not TreeConfig.for_model("gt").auxiliary
    assert TreeConfig.for_model("sx").auxiliary
    with pytest.raises(ParameterError):
        TreeConfig.for_model("rf")
    with pytest.raises(ParameterError):
        TreeConfig(variant="shap")
    with pytest.raises(ParameterError):
        TreeConfig(split_kinds=("axis", "spline"))
    cfg = TreeConfig(msl=3, seed=9)
    assert TreeConfig.from_dict(cfg.to_dict()) == cfg


def test_midpoint_candidates():
    X = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 3.0]])
    cands = enumerate_candidates(X, (0, 1), TreeConfig(msl=1, split_kinds=("axis",)))
    assert AxisSplit(2, 2.0) in cands
    assert [c.threshold for c in cands] == [0.5, 0.5, 2.0]


def test_identical_rows_give_no_candidates():
    X = np.ones((10, 3))
    assert enumerate_candidates(X, (0, 1), TreeConfig(msl=1)) == []


def test_candidates_respect_msl():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 4))
    cands = enumerate_candidates(X, (0, 1), TreeConfig(msl=5))
    kinds = {c.to_dict()["kind"] for c in cands}
    assert kinds == {"axis", "oblique", "gaussian"}
    for c in cands:
        left = int(goes_left(c, X).sum())
        assert 5 <= left <= 15


def test_mse_gain_hand_value():
    ds = dataset([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], [0, 0, 10, 10])
    tree = GeoTree.single_leaf(ds.y, 3)
    assert mse_gain(tree, 0, AxisSplit(0, 1.5), ds) == 25.0
    # children with equal means
    ds2 = dataset(ds.X, [0, 10, 10, 0])
    assert mse_gain(GeoTree.single_leaf(ds2.y, 3), 0, AxisSplit(0, 1.5), ds2) == 0.0


def test_local_gain_equals_training_mse_drop():
    rng = np.random.default_rng(1)
    y = rng.normal(size=30)
    mask = rng.random(30) < 0.4
    before = ((y - y.mean()) ** 2).mean()
    fit = np.where(mask, y[mask].mean(), y[~mask].mean())
    after = ((y - fit) ** 2).mean()
    assert local_mse_gain(y, mask, 30) == pytest.approx(before - after, abs=1e-12)


def fixture12(seed=3):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(0, 10, size=(12, 2))
    X = np.column_stack([locs, rng.normal(size=12)])
    y = np.where(locs[:, 0] > 5, 3.0, 0.0) + X[:, 2] + 0.3 * rng.normal(size=12)
    return dataset(X, y)


def test_disabled_terms_give_plain_mse_gain():
    ds = fixture12()
    cfg = TreeConfig.for_model("gt", msl=2)
    tree = GeoTree.single_leaf(ds.y, 3)
    b = evaluate_gain(tree, 0, AxisSplit(0, 5.0), GainContext(ds), cfg)
    assert b.combined == b.mse_gain == mse_gain(tree, 0, AxisSplit(0, 5.0), ds)


def test_moran_floor_zeroes_the_gain():
    # the split leaves residuals alternating around a 4-cycle, so I = -1
    X = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 1], [0, 1, 1]], dtype=float)
    ds = dataset(X, [1.0, -1.0, 5.0, 3.0])
    W = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)
    tree = GeoTree.single_leaf(ds.y, 3)
    cfg = TreeConfig(msl=1, use_modularity=False)
    b = evaluate_gain(tree, 0, AxisSplit(2, 0.5), GainContext(ds, weights=W), cfg)
    assert b.moran_i == pytest.approx(-1.0, abs=1e-12)
    assert b.mse_gain > 0 and b.combined == 0.0


def sim_loops(R):
    n = len(R)
    D = np.array([[np.sqrt(((R[i] - R[j]) ** 2).sum()) for j in range(n)] for i in range(n)])
    pos = sorted(D[i, j] for i in range(n) for j in range(n) if D[i, j] > 0)
    m = len(pos)
    sigma = pos[m // 2] if m % 2 else (pos[m // 2 - 1] + pos[m // 2]) / 2
    S = np.exp(-D ** 2 / (2 * sigma ** 2))
    np.fill_diagonal(S, 0)
    return S


def test_twelve_row_hand_pipeline():
    ds = fixture12()
    X, y = ds.X, ds.y
    W = knn_weights(X[:, :2], 3)
    eval_rows = np.array([0, 2, 4, 6, 8, 10])
    back = np.array([1, 5, 7, 11])
    basis = SimilarityNetwork(sparse.csr_array(sim_loops(X[eval_rows])))
    ctx = GainContext(ds, weights=W, basis=basis, eval_rows=eval_rows, background_rows=back)
    cfg = TreeConfig(msl=2, sparsify_k=None)
    tree = GeoTree.single_leaf(y, 3)
    rule = AxisSplit(0, 5.0)
    got = evaluate_gain(tree, 0, rule, ctx, cfg)

    left = X[:, 0] <= 5.0
    ml, mr = y[left].mean(), y[~left].mean()
    fitted = np.where(left, ml, mr)
    nl, nr = left.sum(), (~left).sum()
    gain = nl * nr / 12 * (ml - mr) ** 2 / 12
    moran = moran_loops(list(fitted - y), W.matrix.toarray())
    stump = tree.with_split(0, rule, ml, int(nl), mr, int(nr))
    phi = shap_oracle(stump, X[eval_rows], X[back])
    A = sim_loops(X[eval_rows]) * sim_loops(phi)
    q = brute_best(A)
    assert got.mse_gain == pytest.approx(gain, abs=1e-12)
    assert got.moran_i == pytest.approx(moran, abs=1e-12)
    assert got.modularity_q == pytest.approx(q, abs=1e-10)
    assert got.combined == pytest.approx((1 - abs(moran)) * q * gain, abs=1e-10)


def test_depth_one_separable():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    y = np.where(X[:, 2] <= 0.1, -4.0, 6.0)
    tree = grow_tree(dataset(X, y), TreeConfig.for_model("dt", msl=2, md=1))
    rule = tree.root.rule
    assert rule.feature == 2
    assert tree.depth == 1
    np.testing.assert_array_equal(tree.predict(X), y)


def test_md_zero_is_global_mean():
    rng = np.random.default_rng(5)
    ds = dataset(rng.normal(size=(20, 3)), rng.normal(size=20))
    tree = grow_tree(ds, TreeConfig(md=0))
    assert len(tree.nodes) == 1 and tree.root.value == pytest.approx(ds.y.mean())


def test_too_few_rows():
    ds = dataset(np.arange(12.0).reshape(4, 3), np.arange(4.0))
    with pytest.raises(ParameterError):
        grow_tree(ds, TreeConfig(msl=3))


def sx_fixture(seed=6, n=40):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = np.where(X[:, 0] + X[:, 1] > 0, 2.0, -1.0) + X[:, 2] + 0.2 * rng.normal(size=n)
    return dataset(X, y)


def test_shortlist_covering_everything_matches_exhaustive():
    ds = sx_fixture()
    cfg = TreeConfig(msl=5, md=2, n_oblique=4, n_gauss=4, sparsify_k=None)
    a = grow_tree(ds, replace(cfg, shortlist_k=None))
    b = grow_tree(ds, replace(cfg, shortlist_k=10_000))
    np.testing.assert_array_equal(a.predict(ds.X), b.predict(ds.X))
    assert [n.rule for n in a.nodes] == [n.rule for n in b.nodes]


def test_growth_is_deterministic():
    ds = sx_fixture(7)
    cfg = TreeConfig(msl=5, md=2, n_oblique=4, n_gauss=4, seed=3)
    a, b = grow_tree(ds, cfg), grow_tree(ds, cfg)
    assert [n.rule for n in a.nodes] == [n.rule for n in b.nodes]


def test_trace_records_breakdowns():
    ds = sx_fixture(8)
    trace = []
    grow_tree(ds, TreeConfig(msl=5, md=1, n_oblique=2, n_gauss=2, shortlist_k=3), trace=trace)
    assert trace[0]["node"] == 0 and len(trace[0]["breakdowns"]) == 3
    b = trace[0]["breakdowns"][0]
    assert b["moran_i"] is not None and b["modularity_q"] is not None


def cart_root_oracle(X, y, msl):
    best = (-np.inf, None, None)
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        for t in (u[:-1] + u[1:]) / 2:
            left = X[:, j] <= t
            if left.sum() < msl or (~left).sum() < msl:
                continue
            sse = ((y[left] - y[left].mean()) ** 2).sum() + ((y[~left] - y[~left].mean()) ** 2).sum()
            drop = ((y - y.mean()) ** 2).sum() - sse
            if drop > best[0] + 1e-9:
                best = (drop, j, t)
    return best


def test_dt_root_matches_exhaustive_cart():
    rng = np.random.default_rng(10)
    checked = 0
    while checked < 20:
        X = rng.normal(size=(60, 4))
        y = X @ rng.normal(size=4) + rng.normal(size=60)
        drop, j, t = cart_root_oracle(X, y, 5)
        tree = grow_tree(dataset(X, y), TreeConfig.for_model("dt", msl=5, md=1))
        assert tree.root.rule == AxisSplit(j, t)
        checked += 1


def test_msl_md_respected_and_mse_monotone():
    ds = sx_fixture(11, n=80)
    last = np.inf
    for md in range(5):
        tree = grow_tree(ds, TreeConfig.for_model("gt", msl=4, md=md, n_oblique=4, n_gauss=4))
        assert tree.depth <= md
        counts = np.bincount(tree.apply(ds.X))
        assert counts[tree.leaf_ids()].min() >= 4
        mse = ((tree.predict(ds.X) - ds.y) ** 2).mean()
        assert mse <= last + 1e-12
        last = mse


def test_build_context_flags():
    ds = sx_fixture()
    ctx = build_context(ds, TreeConfig(use_modularity=False))
    assert ctx.weights is not None and ctx.basis is None
    ctx = build_context(ds, TreeConfig(use_moran=False, eval_size=10, background_size=5))
    assert ctx.weights is None and len(ctx.eval_rows) == 10 and len(ctx.background_rows) == 5
    assert build_context(ds, TreeConfig.for_model("dt")).basis is None
