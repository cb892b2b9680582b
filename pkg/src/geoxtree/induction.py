"""Greedy top-down growth of GeoTrees under the tailored gain.

A candidate split is scored by::

    combined = max(0, 1 - |I|) * Q * mse_gain

where ``I`` is the global Moran's I of the training residuals of the tentative
sub-model (the current tree with the candidate applied) and ``Q`` is the
maximized modularity of the consensus between a fixed basis similarity network
(raw features or GWR coefficients) and the similarity network of the tentative
sub-model's SHAP values. Either factor can be switched off, which reduces the
score to plain impurity reduction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .dataset import Dataset, SpatialWeights, knn_weights
from .errors import DegenerateGeometryError, ParameterError, ZeroVarianceError
from .gwr import GwrCoefficients, fit_gwr
from .simnet import (SimilarityNetwork, consensus, distance_to_similarity,
                     maximize_modularity, pairwise_distances)
from .spatial_stats import morans_i
from .tree import AxisSplit, GaussianSplit, GeoTree, ObliqueSplit, goes_left
from .treeshap import normalize_attributions, shap_values

SPLIT_KINDS = ("axis", "oblique", "gaussian")
VARIANTS = ("feature", "gwr")


@dataclass(frozen=True)
class TreeConfig:
    msl: int = 5
    md: int = 5
    split_kinds: tuple = SPLIT_KINDS
    use_moran: bool = True
    use_modularity: bool = True
    variant: str = "feature"
    shortlist_k: int | None = 8  # None evaluates every candidate
    n_oblique: int = 16
    n_gauss: int = 16
    max_axis_cuts: int = 64
    max_quantile_cuts: int = 16
    background_size: int = 256
    eval_size: int = 256
    sparsify_k: int | None = 10
    gamma: float = 1.0
    epsilon: float = 0.01
    knn_k: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.msl < 1 or self.md < 0:
            raise ParameterError("msl must be >= 1 and md >= 0")
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}")
        bad = set(self.split_kinds) - set(SPLIT_KINDS)
        if bad or not self.split_kinds:
            raise ParameterError(f"unknown split kinds {sorted(bad)}")
        for name in ("n_oblique", "n_gauss", "max_axis_cuts", "max_quantile_cuts",
                     "background_size", "eval_size", "knn_k"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if self.shortlist_k is not None and self.shortlist_k < 1:
            raise ParameterError("shortlist_k must be positive or None")

    @property
    def auxiliary(self):
        return self.use_moran or self.use_modularity

    def to_dict(self):
        d = asdict(self)
        d["split_kinds"] = list(self.split_kinds)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        d = {k: v for k, v in d.items() if k in names}
        if "split_kinds" in d:
            d["split_kinds"] = tuple(d["split_kinds"])
        return cls(**d)

    @classmethod
    def for_model(cls, model: str, **kw):
        """Presets: ``dt`` CART, ``gt`` GeoTree splits, ``sx`` GeoTree splits + tailored gain."""
        if model == "dt":
            base = dict(split_kinds=("axis",), use_moran=False, use_modularity=False)
        elif model == "gt":
            base = dict(use_moran=False, use_modularity=False)
        elif model == "sx":
            base = {}
        else:
            raise ParameterError(f"unknown model {model!r} (expected dt, gt or sx)")
        base.update(kw)
        return cls(**base)


@dataclass
class GainContext:
    """Everything candidate scoring needs beyond the tree itself."""

    dataset: Dataset
    weights: SpatialWeights | None = None
    basis: SimilarityNetwork | None = None
    eval_rows: np.ndarray | None = None
    background_rows: np.ndarray | None = None
    gwr: GwrCoefficients | None = None
    variant: str = "feature"


@dataclass
class GainBreakdown:
    mse_gain: float
    moran_i: float | None = None  # None: term disabled or undefined
    modularity_q: float | None = None
    combined: float = 0.0
    moran_undefined: bool = False
    degenerate: bool = False


def subsample(n, size, seed, salt):
    if size >= n:
        return np.arange(n)
    rng = np.random.default_rng([seed, salt])
    return np.sort(rng.choice(n, size=size, replace=False))


def basis_network(dataset: Dataset, rows, variant: str, gwr: GwrCoefficients | None = None):
    if variant == "feature":
        return distance_to_similarity(pairwise_distances(dataset.X[rows]))
    if gwr is None:
        raise ParameterError("the gwr variant needs fitted GWR coefficients")
    return distance_to_similarity(pairwise_distances(gwr.B[rows]))


def build_context(dataset: Dataset, config: TreeConfig, weights=None, gwr=None,
                  bandwidth=None) -> GainContext:
    """Spatial weights, GWR fit and subsamples shared by every gain evaluation."""
    ctx = GainContext(dataset=dataset, variant=config.variant)
    if not config.auxiliary:
        return ctx
    if config.use_moran:
        ctx.weights = weights if weights is not None else knn_weights(
            dataset.locations(), min(config.knn_k, dataset.n - 1))
    if config.use_modularity:
        ctx.eval_rows = subsample(dataset.n, config.eval_size, config.seed, 1)
        ctx.background_rows = subsample(dataset.n, config.background_size, config.seed, 2)
        if config.variant == "gwr" and gwr is None:
            gwr = fit_gwr(dataset, bandwidth)
        ctx.gwr = gwr
        ctx.basis = basis_network(dataset, ctx.eval_rows, config.variant, gwr)
    return ctx


# candidates --------------------------------------------------------------

def _quantile_levels(k):
    return np.arange(1, k + 1) / (k + 1)


def _feasible(score, threshold, msl):
    n_left = int(np.count_nonzero(score <= threshold))
    return n_left >= msl and score.size - n_left >= msl


def enumerate_candidates(X, loc_idx, config: TreeConfig, rng=None) -> list:
    """Candidate rules for the node whose rows are ``X``.

    Only rules leaving at least ``config.msl`` rows on each side are returned.
    Axis cuts come first (feature by feature, ascending), then oblique, then
    Gaussian, which fixes the tie-breaking order.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    msl = config.msl
    if rng is None:
        rng = np.random.default_rng(config.seed)
    out = []
    if n < 2 * msl:
        return out
    if "axis" in config.split_kinds:
        for j in range(X.shape[1]):
            col = np.sort(X[:, j])
            u = np.unique(col)
            mids = (u[:-1] + u[1:]) / 2.0
            if mids.size > config.max_axis_cuts:
                pick = np.unique(np.round(np.linspace(0, mids.size - 1,
                                                      config.max_axis_cuts)).astype(int))
                mids = mids[pick]
            n_left = np.searchsorted(col, mids, side="right")
            ok = (n_left >= msl) & (n - n_left >= msl)
            out.extend(AxisSplit(j, float(t)) for t in mids[ok])
    loc = tuple(loc_idx)
    P = X[:, list(loc)]
    levels = _quantile_levels(config.max_quantile_cuts)
    if "oblique" in config.split_kinds and n >= 2:
        for _ in range(config.n_oblique):
            a, b = rng.choice(n, size=2, replace=False)
            d = P[b] - P[a]
            norm = math.hypot(d[0], d[1])
            if norm == 0:
                continue
            w1, w2 = -d[1] / norm, d[0] / norm
            proj = w1 * P[:, 0] + w2 * P[:, 1]
            for t in np.unique(np.quantile(proj, levels)):
                if _feasible(proj, t, msl):
                    out.append(ObliqueSplit(float(w1), float(w2), float(t), loc))
    if "gaussian" in config.split_kinds and n >= 2:
        for _ in range(config.n_gauss):
            a, b = rng.choice(n, size=2, replace=False)
            f1, f2 = P[a], P[b]
            focal = math.dist(f1, f2)
            s = np.hypot(P[:, 0] - f1[0], P[:, 1] - f1[1]) + np.hypot(P[:, 0] - f2[0],
                                                                       P[:, 1] - f2[1])
            s_ok = s[s >= focal]
            if s_ok.size == 0:
                continue
            for c in np.unique(np.quantile(s_ok, levels)):
                c = max(float(c), focal)
                if _feasible(s, c, msl):
                    out.append(GaussianSplit((float(f1[0]), float(f1[1])),
                                             (float(f2[0]), float(f2[1])), c, loc))
    return out


# gains -------------------------------------------------------------------

def _node_rows(tree: GeoTree, node: int, X) -> np.ndarray:
    return np.flatnonzero(tree.apply(X) == node)


def local_mse_gain(y_node, left_mask, n_total) -> float:
    """Global-MSE reduction from splitting one node: ``nL*nR/(nL+nR) * (mL-mR)^2 / n``."""
    nl = int(np.count_nonzero(left_mask))
    nr = y_node.size - nl
    if nl == 0 or nr == 0:
        return 0.0
    ml = y_node[left_mask].mean()
    mr = y_node[~left_mask].mean()
    return float(nl * nr / (nl + nr) * (ml - mr) ** 2 / n_total)


def mse_gain(tree: GeoTree, node: int, rule, dataset: Dataset) -> float:
    """Drop in training MSE over all rows when ``node`` is split by ``rule``."""
    rows = _node_rows(tree, node, dataset.X)
    mask = goes_left(rule, dataset.X[rows])
    return local_mse_gain(dataset.y[rows], mask, dataset.n)


def _tentative(tree, node, rule, y_node, mask):
    nl = int(mask.sum())
    return tree.with_split(node, rule, y_node[mask].mean(), nl,
                           y_node[~mask].mean(), y_node.size - nl)


def attribution_network(tree: GeoTree, context: GainContext, epsilon=0.01) -> SimilarityNetwork:
    X = context.dataset.X
    fore = X[context.eval_rows]
    phi = shap_values(tree, fore, X[context.background_rows]).phi
    if context.variant == "gwr":
        phi = normalize_attributions(phi, fore, epsilon)
    return distance_to_similarity(pairwise_distances(phi))


def consensus_modularity(tree: GeoTree, context: GainContext, config: TreeConfig):
    """Maximized modularity of the basis/attribution consensus network for ``tree``."""
    g = consensus(context.basis, attribution_network(tree, context, config.epsilon),
                  config.sparsify_k)
    return maximize_modularity(g, config.gamma, config.seed)


def evaluate_gain(tree: GeoTree, node: int, rule, context: GainContext, config: TreeConfig,
                  rows=None, predictions=None) -> GainBreakdown:
    """Full tailored gain of one candidate.

    ``rows`` (training rows at ``node``) and ``predictions`` (current training
    predictions) are recomputed from the tree when omitted.
    """
    ds = context.dataset
    if rows is None:
        rows = _node_rows(tree, node, ds.X)
    y_node = ds.y[rows]
    mask = goes_left(rule, ds.X[rows])
    out = GainBreakdown(mse_gain=local_mse_gain(y_node, mask, ds.n))
    if not config.auxiliary:
        out.combined = out.mse_gain
        return out
    sub = _tentative(tree, node, rule, y_node, mask)
    moran_factor, q_factor = 1.0, 1.0
    if config.use_moran:
        pred = np.array(tree.predict(ds.X) if predictions is None else predictions, dtype=float)
        pred[rows] = np.where(mask, sub.nodes[-2].value, sub.nodes[-1].value)
        resid = pred - ds.y
        try:
            if np.ptp(resid) <= 1e-12 * max(1.0, float(np.abs(ds.y).max())):
                raise ZeroVarianceError("constant residuals")
            out.moran_i = morans_i(resid, context.weights)
            moran_factor = max(0.0, 1.0 - abs(out.moran_i))
        except ZeroVarianceError:
            # a perfect fit leaves no spatial residual structure to penalize
            out.moran_undefined = True
    if config.use_modularity:
        try:
            out.modularity_q = consensus_modularity(sub, context, config).q
            q_factor = out.modularity_q
        except DegenerateGeometryError:
            out.degenerate = True
            q_factor = 0.0
    out.combined = moran_factor * q_factor * out.mse_gain
    return out


# growth ------------------------------------------------------------------

def grow_tree(dataset: Dataset, config: TreeConfig, context: GainContext | None = None,
              trace=None) -> GeoTree:
    """Grow a tree breadth-first; every node picks the best shortlisted candidate.

    ``trace``, if a list, receives one dict per expanded node describing the
    decision.
    """
    if dataset.n < 2 * config.msl:
        raise ParameterError(f"need at least 2*msl={2 * config.msl} rows, got {dataset.n}")
    if context is None:
        context = build_context(dataset, config)
    X, y = dataset.X, dataset.y
    tree = GeoTree.single_leaf(y, dataset.p, config=config.to_dict(),
                               standardization=dataset.standardization,
                               feature_names=dataset.feature_names)
    leaf_of = np.zeros(dataset.n, dtype=int)
    pred = np.full(dataset.n, tree.root.value)
    queue = [0]
    while queue:
        node = queue.pop(0)
        nd = tree.nodes[node]
        rows = np.flatnonzero(leaf_of == node)
        if nd.depth >= config.md or rows.size < 2 * config.msl:
            continue
        rng = np.random.default_rng([config.seed, node])
        cands = enumerate_candidates(X[rows], dataset.loc_idx, config, rng)
        if not cands:
            continue
        y_node = y[rows]
        masks = [goes_left(c, X[rows]) for c in cands]
        mse = np.array([local_mse_gain(y_node, m, dataset.n) for m in masks])
        order = np.argsort(-mse, kind="stable")
        k = len(order) if config.shortlist_k is None else min(config.shortlist_k, len(order))
        shortlist = order[:k]
        if config.auxiliary:
            breakdowns = [evaluate_gain(tree, node, cands[i], context, config, rows, pred)
                          for i in shortlist]
        else:
            breakdowns = [GainBreakdown(mse_gain=mse[i], combined=mse[i]) for i in shortlist]
        combined = np.array([b.combined for b in breakdowns])
        if config.use_modularity and all(b.degenerate for b in breakdowns):
            combined = np.array([b.mse_gain for b in breakdowns])
        best = int(np.argmax(combined))  # first maximum = best mse rank
        if trace is not None:
            trace.append({"node": node, "n_candidates": len(cands),
                          "chosen": cands[shortlist[best]].to_dict(),
                          "breakdowns": [asdict(b) for b in breakdowns]})
        if not combined[best] > 0:
            continue
        rule = cands[shortlist[best]]
        mask = masks[shortlist[best]]
        tree = _tentative(tree, node, rule, y_node, mask)
        li, ri = len(tree.nodes) - 2, len(tree.nodes) - 1
        leaf_of[rows[mask]] = li
        leaf_of[rows[~mask]] = ri
        pred[rows[mask]] = tree.nodes[li].value
        pred[rows[~mask]] = tree.nodes[ri].value
        queue.extend([li, ri])
    return tree
