"""Accuracy metrics, cross-validation, attribution dispersion and experiment reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import Dataset, kfold_indices, knn_weights
from .errors import DegenerateGeometryError, ParameterError, ShapeError, ZeroVarianceError
from .induction import TreeConfig, build_context, consensus_modularity, grow_tree
from .simnet import CommunityPartition
from .spatial_stats import residual_morans_i
from .treeshap import AttributionMatrix, shap_values

METRICS = ("range", "iqr", "cv", "entropy", "gini")


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise ShapeError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size < 2:
        raise ShapeError("need at least two values")
    return y, yhat


def r_squared(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0:
        raise ZeroVarianceError("r-squared is undefined for a constant target")
    return 1.0 - float(((y - yhat) ** 2).sum()) / sst


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return math.sqrt(float(((y - yhat) ** 2).mean()))


# dispersion --------------------------------------------------------------

def entropy(a) -> float:
    """Shannon entropy (natural log) of a nonnegative vector normalized to sum 1."""
    a = np.asarray(a, dtype=float)
    total = a.sum()
    if total <= 0:
        return 0.0
    p = a / total
    p = p[p > 0]  # also drops subnormals that underflow in the division
    return float(-(p * np.log(p)).sum()) + 0.0  # no negative zero


def gini(a) -> float:
    """``sum_i sum_j |a_i - a_j| / (2 p sum a)``; 0 for an all-zero vector."""
    a = np.asarray(a, dtype=float)
    total = a.sum()
    if total <= 0:
        return 0.0
    return float(np.abs(a[:, None] - a[None, :]).sum() / (2 * a.size * total))


@dataclass
class DispersionReport:
    rows: list  # one dict per community: community, size, degenerate, and METRICS
    average: dict  # unweighted mean over communities

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["community", "size", "degenerate", *METRICS])
            for r in self.rows:
                out.writerow([r["community"], r["size"], int(r["degenerate"]),
                              *(repr(float(r[m])) for m in METRICS)])
            out.writerow(["average", sum(r["size"] for r in self.rows),
                          sum(int(r["degenerate"]) for r in self.rows),
                          *(repr(float(self.average[m])) for m in METRICS)])


def dispersion(attr, partition) -> DispersionReport:
    """Within-community spread of attributions, then the unweighted average.

    Range, IQR (linear-interpolation quartiles) and CV (population std over
    mean |phi|) are per feature on raw values and then averaged over
    features. Entropy and Gini use the vector of per-feature mean |phi|.
    Communities with fewer than two rows are flagged and get zero spread.
    """
    phi = attr.phi if isinstance(attr, AttributionMatrix) else np.asarray(attr, dtype=float)
    labels = partition.labels if isinstance(partition, CommunityPartition) else np.asarray(partition)
    if phi.ndim != 2 or labels.shape != (phi.shape[0],):
        raise ShapeError("partition must label every attribution row")
    rows = []
    for c in np.unique(labels):
        block = phi[labels == c]
        mean_abs = np.abs(block).mean(axis=0)
        row = {"community": int(c), "size": int(block.shape[0]),
               "degenerate": block.shape[0] < 2,
               "entropy": entropy(mean_abs), "gini": gini(mean_abs)}
        if row["degenerate"]:
            row.update(range=0.0, iqr=0.0, cv=0.0)
        else:
            q1, q3 = np.percentile(block, [25, 75], axis=0)
            sd = block.std(axis=0)
            cv = np.divide(sd, mean_abs, out=np.zeros_like(sd), where=mean_abs > 0)
            row.update(range=float(np.ptp(block, axis=0).mean()), iqr=float((q3 - q1).mean()),
                       cv=float(cv.mean()))
        rows.append(row)
    average = {m: float(np.mean([r[m] for r in rows])) for m in METRICS}
    return DispersionReport(rows=rows, average=average)


# cross-validation --------------------------------------------------------

@dataclass
class CVResult:
    msl: int
    md: int
    table: list  # one dict per (grid point, fold)

    def summary(self):
        """Mean test RMSE per grid point, in grid order."""
        out = {}
        for r in self.table:
            out.setdefault((r["msl"], r["md"]), []).append(r["rmse_test"])
        return {k: float(np.mean(v)) for k, v in out.items()}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["msl", "md", "fold", "rmse_train", "rmse_test"])
            for r in self.table:
                out.writerow([r["msl"], r["md"], r["fold"], repr(r["rmse_train"]),
                              repr(r["rmse_test"])])


def cross_validate(dataset: Dataset, config: TreeConfig, grid, folds: int = 5,
                   seed: int = 0, gwr_bandwidth=None) -> CVResult:
    """Pick (msl, md) by mean held-out RMSE over k folds.

    Ties go to the smaller md, then the larger msl. Networks, weights and GWR
    fits are rebuilt on each training fold and shared across grid points.
    """
    grid = [(int(a), int(b)) for a, b in grid]
    if not grid:
        raise ParameterError("grid must not be empty")
    table = []
    for f, (tr, te) in enumerate(kfold_indices(dataset.n, folds, seed)):
        dtr, dte = dataset.subset(tr), dataset.subset(te)
        ctx = build_context(dtr, config, bandwidth=gwr_bandwidth) if config.auxiliary else None
        for msl, md in grid:
            cfg = replace(config, msl=msl, md=md)
            tree = grow_tree(dtr, cfg, ctx)
            table.append({"msl": msl, "md": md, "fold": f,
                          "rmse_train": rmse(dtr.y, tree.predict(dtr.X)),
                          "rmse_test": rmse(dte.y, tree.predict(dte.X))})
    means = CVResult(0, 0, table).summary()
    best = min(means, key=lambda k: (means[k], k[1], -k[0]))
    return CVResult(msl=best[0], md=best[1], table=table)


# experiments -------------------------------------------------------------

@dataclass
class MetricsReport:
    variant: str
    r2_train: float
    r2_test: float
    rmse_train: float
    rmse_test: float
    residual_moran_i: float
    modularity: float
    parameters: dict = field(default_factory=dict)

    def to_dict(self):
        return {"variant": self.variant, "r2_train": self.r2_train, "r2_test": self.r2_test,
                "rmse_train": self.rmse_train, "rmse_test": self.rmse_test,
                "residual_moran_i": self.residual_moran_i,
                f"modularity_{self.variant}": self.modularity,
                "parameters": self.parameters}


@dataclass
class Audit:
    """Post-hoc attribution audit of one model on one dataset."""
    attributions: AttributionMatrix
    partition: CommunityPartition
    dispersion: DispersionReport
    rows: np.ndarray  # dataset rows that were explained
    modularity: float


def audit_context(dataset: Dataset, config: TreeConfig, gwr=None, bandwidth=None):
    """Evaluation rows, background rows and basis network, whatever the model flags."""
    return build_context(dataset, replace(config, use_moran=False, use_modularity=True),
                         gwr=gwr, bandwidth=bandwidth)


def audit(tree, dataset: Dataset, config: TreeConfig, context=None, size=None) -> Audit:
    """Explain ``tree`` on (a subsample of) ``dataset`` and partition the consensus network.

    Baselines are audited exactly like SX models: the basis network follows
    ``config.variant`` whatever model produced the tree.
    """
    cfg = replace(config, use_modularity=True)
    if size is not None:
        cfg = replace(cfg, eval_size=size)
    ctx = context if context is not None else audit_context(dataset, cfg)
    X = dataset.X
    phi = shap_values(tree, X[ctx.eval_rows], X[ctx.background_rows],
                      foreground_ids=[dataset.ids[i] for i in ctx.eval_rows])
    try:
        part = consensus_modularity(tree, ctx, cfg)
    except DegenerateGeometryError:
        # e.g. a single-leaf model: every attribution is zero
        part = CommunityPartition(labels=np.zeros(ctx.eval_rows.size, dtype=int), q=0.0,
                                  gamma=cfg.gamma)
    return Audit(attributions=phi, partition=part, dispersion=dispersion(phi, part),
                 rows=np.asarray(ctx.eval_rows), modularity=float(part.q))


def safe_moran(tree, dataset, weights) -> float:
    try:
        return residual_morans_i(tree, dataset, weights)
    except ZeroVarianceError:
        return 0.0


@dataclass
class Experiment:
    tree: object
    metrics: MetricsReport
    audit: Audit
    train_rows: np.ndarray
    test_rows: np.ndarray


def train_test_rows(n, folds, seed, fold=0):
    return kfold_indices(n, folds, seed)[fold]


def run_experiment(dataset: Dataset, config: TreeConfig, folds: int = 5, fold: int = 0,
                   audit_size: int | None = 512, gwr_bandwidth=None) -> Experiment:
    """Train on all but one fold, score on it, and audit on the training rows.

    ``dataset`` is expected to be standardized already.
    """
    tr, te = train_test_rows(dataset.n, folds, config.seed, fold)
    dtr, dte = dataset.subset(tr), dataset.subset(te)
    weights = knn_weights(dtr.locations(), config.knn_k)
    ctx = build_context(dtr, config, weights=weights, bandwidth=gwr_bandwidth) \
        if config.auxiliary else None
    tree = grow_tree(dtr, config, ctx)
    audit_cfg = replace(config, eval_size=audit_size if audit_size else dtr.n)
    actx = audit_context(dtr, audit_cfg, gwr=ctx.gwr if ctx is not None else None,
                         bandwidth=gwr_bandwidth)
    aud = audit(tree, dtr, audit_cfg, actx)
    params = config.to_dict()
    params.update(folds=folds, fold=fold, audit_size=audit_size, n_train=int(dtr.n),
                  n_test=int(dte.n))
    if ctx is not None and ctx.gwr is not None:
        params["gwr_bandwidth"] = float(ctx.gwr.bandwidth)
    metrics = MetricsReport(
        variant=config.variant,
        r2_train=r_squared(dtr.y, tree.predict(dtr.X)),
        r2_test=r_squared(dte.y, tree.predict(dte.X)),
        rmse_train=rmse(dtr.y, tree.predict(dtr.X)),
        rmse_test=rmse(dte.y, tree.predict(dte.X)),
        residual_moran_i=safe_moran(tree, dtr, weights),
        modularity=aud.modularity, parameters=params)
    return Experiment(tree=tree, metrics=metrics, audit=aud, train_rows=tr, test_rows=te)


ABLATIONS = (("sx", {}), ("sx_no_moran", {"use_moran": False}),
             ("sx_no_modularity", {"use_modularity": False}))


def ablate(dataset: Dataset, config: TreeConfig, **kw) -> dict:
    """Full SX and its two single-term ablations on identical folds and seeds."""
    out = {}
    for name, change in ABLATIONS:
        flags = {"split_kinds": ("axis", "oblique", "gaussian"), "use_moran": True,
                 "use_modularity": True, **change}
        cfg = replace(config, **flags)
        out[name] = run_experiment(dataset, cfg, **kw)
    return out
