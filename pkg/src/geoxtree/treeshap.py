"""Exact interventional Shapley values for GeoTrees against a background set.

Two evaluation routes are provided. ``method="enumerate"`` evaluates the
coalition sum directly (2**p hybrid rows per foreground/background pair).
``method="path"`` works leaf by leaf: for a foreground/background pair, each
feature tested on the root-to-leaf path is either satisfied by both samples
(free), by only one of them (pinned to that sample), or by neither (the leaf
is unreachable). A leaf with ``a`` features pinned to the foreground and ``b``
to the background is reached by exactly the coalitions containing the former
and none of the latter, whose Shapley value is ``(a-1)! b! / (a+b)!`` per
foreground feature and ``-a! (b-1)! / (a+b)!`` per background feature, times
the leaf value. Columns that share a two-column split (oblique, Gaussian) are
expanded jointly over all foreground/background assignments.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from math import factorial

import numpy as np

from .errors import ParameterError, ShapeError
from .tree import GeoTree

_UNSET, _FORE, _BACK = 0, 1, 2


@dataclass(frozen=True)
class AttributionMatrix:
    phi: np.ndarray  # n_foreground x p
    base: float
    foreground_ids: tuple = ()
    background_ids: tuple = ()

    def to_csv(self, path, feature_names=None):
        p = self.phi.shape[1]
        names = list(feature_names) if feature_names else [f"f{j}" for j in range(p)]
        ids = self.foreground_ids or tuple(range(self.phi.shape[0]))
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["id", *(f"phi_{n}" for n in names), "base"])
            for i, row in zip(ids, self.phi):
                out.writerow([i, *(repr(float(v)) for v in row), repr(self.base)])


def _check_rows(tree, rows, what):
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.ndim != 2 or rows.shape[1] != tree.n_features:
        raise ShapeError(f"{what} rows must have {tree.n_features} features, got {rows.shape}")
    return rows


def _leaf_weights(p):
    """Tables indexed [a, b] for foreground-pinned and background-pinned features."""
    wf = np.zeros((p + 1, p + 1))
    wb = np.zeros((p + 1, p + 1))
    for a in range(p + 1):
        for b in range(p + 1 - a):
            if a + b == 0:
                continue
            if a:
                wf[a, b] = factorial(a - 1) * factorial(b) / factorial(a + b)
            if b:
                wb[a, b] = factorial(a) * factorial(b - 1) / factorial(a + b)
    return wf, wb


def _path_phi(tree: GeoTree, fore, back):
    nf, p = fore.shape
    nb = back.shape[0]
    wf, wb = _leaf_weights(p)
    # columns used together by some rule get their foreground/background
    # assignments enumerated jointly; every other column is handled alone
    joint = sorted({f for nd in tree.nodes if not nd.is_leaf and len(nd.rule.features) > 1
                    for f in nd.rule.features})
    single = [j for j in range(p) if j not in joint]
    col = {j: k for k, j in enumerate(single)}
    alphas = list(itertools.product((_FORE, _BACK), repeat=len(joint)))
    n_fore = [sum(1 for s in a if s == _FORE) for a in alphas]
    phi = np.zeros((nf, p))

    def hybrid_test(rule, alpha):
        side = dict(zip(joint, alpha))
        vals = np.stack([np.broadcast_to(fore[:, f][:, None], (nf, nb)) if side[f] == _FORE
                         else np.broadcast_to(back[:, f][None, :], (nf, nb))
                         for f in rule.features], axis=-1)
        return rule.test(vals.reshape(-1, vals.shape[-1])).reshape(nf, nb)

    def leaf(value, f_ok, b_ok, jok):
        fo, bo = f_ok.astype(float), b_ok.astype(float)
        fn, bn = 1.0 - fo, 1.0 - bo
        reach = (fn @ bn.T) == 0  # some column satisfied by neither sample
        if not reach.any():
            return
        a0 = (fo @ bn.T).astype(int)  # columns pinned to the foreground
        b0 = (fn @ bo.T).astype(int)  # columns pinned to the background
        up_sum = np.zeros((nf, nb))
        down_sum = np.zeros((nf, nb))
        for t, alpha in enumerate(alphas if jok is not None else [()]):
            ok = reach if jok is None else reach & jok[t]
            if jok is not None and not ok.any():
                continue
            a = a0 + (n_fore[t] if jok is not None else 0)
            b = b0 + (len(alpha) - n_fore[t] if jok is not None else 0)
            up = np.where(ok, value * wf[a, b], 0.0)
            down = np.where(ok, value * wb[a, b], 0.0)
            up_sum += up
            down_sum += down
            for j, s in zip(joint, alpha):
                phi[:, j] += (up if s == _FORE else -down).sum(axis=1)
        if single:
            phi[:, single] += fo * (up_sum @ bn) - fn * (down_sum @ bo)

    stack = [(0, np.ones((nf, len(single)), dtype=bool), np.ones((nb, len(single)), dtype=bool),
              None)]
    while stack:
        nid, f_ok, b_ok, jok = stack.pop()
        nd = tree.nodes[nid]
        if nd.is_leaf:
            if nd.value != 0.0:
                leaf(nd.value, f_ok, b_ok, jok)
            continue
        rule = nd.rule
        feats = rule.features
        if len(feats) == 1 and feats[0] in col:
            k = col[feats[0]]
            fl = rule.test(fore[:, feats])
            bl = rule.test(back[:, feats])
            for child, want in ((nd.left, True), (nd.right, False)):
                f2, b2 = f_ok.copy(), b_ok.copy()
                f2[:, k] &= fl == want
                b2[:, k] &= bl == want
                stack.append((child, f2, b2, jok))
        else:
            tests = [hybrid_test(rule, a) for a in alphas]
            base = jok if jok is not None else [True] * len(alphas)
            stack.append((nd.left, f_ok, b_ok, [o & t for o, t in zip(base, tests)]))
            stack.append((nd.right, f_ok, b_ok, [o & ~t for o, t in zip(base, tests)]))
    return phi / nb


def _enumerate_phi(tree: GeoTree, fore, back):
    nf, p = fore.shape
    nb = back.shape[0]
    masks = np.array(list(itertools.product((False, True), repeat=p)))  # 2^p x p
    sizes = masks.sum(axis=1)
    weight = np.array([factorial(s) * factorial(p - s - 1) / factorial(p) if s < p else 0.0
                       for s in range(p + 1)])
    bits = masks.astype(int) @ (1 << np.arange(p)[::-1])
    index = np.empty(len(masks), dtype=int)
    index[bits] = np.arange(len(masks))
    phi = np.zeros((nf, p))
    for i in range(nf):
        hybrid = np.where(masks[None, :, :], fore[i][None, None, :], back[:, None, :])
        v = tree.predict(hybrid.reshape(-1, p)).reshape(nb, len(masks)).mean(axis=0)
        for j in range(p):
            without = ~masks[:, j]
            with_j = index[bits[without] | (1 << (p - 1 - j))]
            phi[i, j] = np.sum(weight[sizes[without]] * (v[with_j] - v[without]))
    return phi


def shap_values(tree: GeoTree, foreground, background, method: str = "path",
                foreground_ids=(), background_ids=()) -> AttributionMatrix:
    """Interventional SHAP values of ``tree`` for each foreground row.

    Values are averaged over all background rows; ``base`` is the mean
    background prediction so ``base + phi.sum(1)`` reproduces the prediction.
    """
    fore = _check_rows(tree, foreground, "foreground")
    back = _check_rows(tree, background, "background")
    if back.shape[0] == 0:
        raise ShapeError("background set is empty")
    if method == "path":
        phi = _path_phi(tree, fore, back)
    elif method == "enumerate":
        phi = _enumerate_phi(tree, fore, back)
    else:
        raise ParameterError(f"unknown SHAP method {method!r}")
    base = float(tree.predict(back).mean())
    return AttributionMatrix(phi=phi, base=base, foreground_ids=tuple(foreground_ids),
                             background_ids=tuple(background_ids))


def normalize_attributions(attr, features, epsilon: float = 0.01) -> np.ndarray:
    """Attribution per unit feature value, with |x| clamped below at ``epsilon``."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    phi = attr.phi if isinstance(attr, AttributionMatrix) else np.asarray(attr, dtype=float)
    x = np.asarray(features, dtype=float)
    if x.shape != phi.shape:
        raise ShapeError(f"features shape {x.shape} does not match attributions {phi.shape}")
    sign = np.where(x < 0, -1.0, 1.0)
    return phi / (sign * np.maximum(np.abs(x), epsilon))


def joint_location_attribution(attr, loc_idx) -> np.ndarray:
    """Per-row combined absolute attribution of the two coordinate columns."""
    phi = attr.phi if isinstance(attr, AttributionMatrix) else np.asarray(attr, dtype=float)
    i, j = loc_idx
    return np.abs(phi[:, i]) + np.abs(phi[:, j])
