"""Split rules and the binary GeoTree container.

Every rule sends a point left when its test value is ``<=`` the threshold,
so the boundary is always inclusive on the left for all three split kinds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

FORMAT_VERSION = 1
LEFT, RIGHT = "left", "right"


@dataclass(frozen=True)
class AxisSplit:
    feature: int
    threshold: float
    kind = "axis"

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ParameterError("threshold must be finite")

    @property
    def features(self):
        return (self.feature,)

    def test(self, values):
        """``values`` holds this rule's feature columns, shape (m, len(features))."""
        return values[:, 0] <= self.threshold

    def to_dict(self):
        return {"kind": self.kind, "feature": self.feature, "threshold": self.threshold}


@dataclass(frozen=True)
class ObliqueSplit:
    """Half-plane ``w1*x + w2*y <= threshold`` over the two locational columns."""

    w1: float
    w2: float
    threshold: float
    loc: tuple[int, int] = (0, 1)
    kind = "oblique"

    def __post_init__(self):
        if self.w1 == 0 and self.w2 == 0:
            raise ParameterError("oblique weights cannot both be zero")
        if not all(math.isfinite(v) for v in (self.w1, self.w2, self.threshold)):
            raise ParameterError("oblique parameters must be finite")

    @property
    def features(self):
        return tuple(self.loc)

    def test(self, values):
        return self.w1 * values[:, 0] + self.w2 * values[:, 1] <= self.threshold

    def to_dict(self):
        return {"kind": self.kind, "w1": self.w1, "w2": self.w2,
                "threshold": self.threshold, "loc": list(self.loc)}


@dataclass(frozen=True)
class GaussianSplit:
    """Closed ellipse: sum of distances to the two foci ``<= c``."""

    f1: tuple[float, float]
    f2: tuple[float, float]
    c: float
    loc: tuple[int, int] = (0, 1)
    kind = "gaussian"

    def __post_init__(self):
        vals = (*self.f1, *self.f2, self.c)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError("gaussian parameters must be finite")
        if self.c < math.dist(self.f1, self.f2):
            raise ParameterError("c must be at least the focal distance")

    @property
    def features(self):
        return tuple(self.loc)

    def test(self, values):
        d1 = np.hypot(values[:, 0] - self.f1[0], values[:, 1] - self.f1[1])
        d2 = np.hypot(values[:, 0] - self.f2[0], values[:, 1] - self.f2[1])
        return d1 + d2 <= self.c

    def to_dict(self):
        return {"kind": self.kind, "f1": list(self.f1), "f2": list(self.f2), "c": self.c,
                "loc": list(self.loc)}


def goes_left(rule, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return rule.test(X[:, list(rule.features)])


def route(rule, point) -> str:
    point = np.asarray(point, dtype=float).reshape(1, -1)
    return LEFT if goes_left(rule, point)[0] else RIGHT


@dataclass
class Node:
    value: float
    count: int
    depth: int
    rule: object = None
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self):
        return self.rule is None


@dataclass
class GeoTree:
    n_features: int
    nodes: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    standardization: tuple | None = None
    feature_names: tuple | None = None

    @classmethod
    def single_leaf(cls, y, n_features, **kw):
        y = np.asarray(y, dtype=float)
        return cls(n_features=n_features, nodes=[Node(float(y.mean()), len(y), 0)], **kw)

    @property
    def root(self):
        return self.nodes[0]

    def leaf_ids(self):
        return [i for i, nd in enumerate(self.nodes) if nd.is_leaf]

    @property
    def depth(self):
        return max(nd.depth for nd in self.nodes)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"expected rows with {self.n_features} features, got shape {X.shape}")
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf id reached by every row."""
        X = self._check(X)
        out = np.empty(X.shape[0], dtype=int)
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            nid, rows = stack.pop()
            nd = self.nodes[nid]
            if nd.is_leaf:
                out[rows] = nid
                continue
            mask = goes_left(nd.rule, X[rows])
            stack.append((nd.left, rows[mask]))
            stack.append((nd.right, rows[~mask]))
        return out

    def predict(self, X) -> np.ndarray:
        leaves = self.apply(X)
        values = np.array([nd.value for nd in self.nodes])
        return values[leaves]

    def with_split(self, leaf, rule, left_value, left_count, right_value, right_count):
        """Copy of the tree with ``leaf`` turned into an internal node."""
        old = self.nodes[leaf]
        if not old.is_leaf:
            raise ParameterError(f"node {leaf} is not a leaf")
        nodes = [replace(nd) for nd in self.nodes]
        li, ri = len(nodes), len(nodes) + 1
        nodes[leaf] = replace(old, rule=rule, left=li, right=ri)
        nodes.append(Node(float(left_value), int(left_count), old.depth + 1))
        nodes.append(Node(float(right_value), int(right_count), old.depth + 1))
        return replace(self, nodes=nodes)

    def tested_features(self) -> set:
        return {f for nd in self.nodes if not nd.is_leaf for f in nd.rule.features}

    # serialization -------------------------------------------------------

    def to_dict(self):
        nodes = []
        for nd in self.nodes:
            if nd.is_leaf:
                nodes.append({"kind": "leaf", "value": nd.value, "count": nd.count,
                              "depth": nd.depth})
            else:
                d = nd.rule.to_dict()
                d.update(left=nd.left, right=nd.right, value=nd.value, count=nd.count,
                         depth=nd.depth)
                nodes.append(d)
        return {
            "format_version": FORMAT_VERSION,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names) if self.feature_names else None,
            "config": self.config,
            "standardization": [list(s) for s in self.standardization]
            if self.standardization else None,
            "nodes": nodes,
        }


def serialize(tree: GeoTree) -> bytes:
    return (json.dumps(tree.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n").encode()


def _get(d, key, path, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"missing field {key!r}", path=path)
    v = d[key]
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise FormatError("expected a finite number", path=f"{path}.{key}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise FormatError("expected an integer", path=f"{path}.{key}")
        return v
    return v


def _point(d, key, path):
    v = _get(d, key, path)
    if not (isinstance(v, list) and len(v) == 2
            and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v)):
        raise FormatError("expected a 2-element coordinate", path=f"{path}.{key}")
    return (float(v[0]), float(v[1]))


def _rule_from_dict(d, path):
    kind = _get(d, "kind", path)
    try:
        if kind == "axis":
            return AxisSplit(_get(d, "feature", path, int), _get(d, "threshold", path, float))
        if kind == "oblique":
            loc = _point(d, "loc", path) if "loc" in d else (0, 1)
            return ObliqueSplit(_get(d, "w1", path, float), _get(d, "w2", path, float),
                                _get(d, "threshold", path, float), tuple(int(i) for i in loc))
        if kind == "gaussian":
            loc = _point(d, "loc", path) if "loc" in d else (0, 1)
            return GaussianSplit(_point(d, "f1", path), _point(d, "f2", path),
                                 _get(d, "c", path, float), tuple(int(i) for i in loc))
    except ParameterError as exc:
        raise FormatError(str(exc), path=path) from None
    raise FormatError(f"unknown split kind {kind!r}", path=f"{path}.kind")


def deserialize(data) -> GeoTree:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode()
    try:
        doc = json.loads(data) if isinstance(data, str) else data
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path=f"line {exc.lineno}") from None
    version = _get(doc, "format_version", "$", int)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {version}", path="$.format_version")
    n_features = _get(doc, "n_features", "$", int)
    raw_nodes = _get(doc, "nodes", "$")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise FormatError("nodes must be a nonempty list", path="$.nodes")
    nodes = []
    for i, d in enumerate(raw_nodes):
        path = f"$.nodes[{i}]"
        kind = _get(d, "kind", path)
        value = _get(d, "value", path, float)
        count = int(d.get("count", 0)) if isinstance(d, dict) else 0
        depth = int(d.get("depth", 0)) if isinstance(d, dict) else 0
        if kind == "leaf":
            nodes.append(Node(value, count, depth))
            continue
        rule = _rule_from_dict(d, path)
        left, right = _get(d, "left", path, int), _get(d, "right", path, int)
        for key, child in (("left", left), ("right", right)):
            if not (0 < child < len(raw_nodes)) or child == i:
                raise FormatError(f"child index {child} out of range", path=f"{path}.{key}")
        if any(f >= n_features or f < 0 for f in rule.features):
            raise FormatError("split feature out of range", path=path)
        nodes.append(Node(value, count, depth, rule, left, right))
    # every non-root node must have exactly one parent, so routing is total
    parents = [0] * len(nodes)
    for nd in nodes:
        if not nd.is_leaf:
            parents[nd.left] += 1
            parents[nd.right] += 1
    if parents[0] != 0 or any(c != 1 for c in parents[1:]):
        raise FormatError("nodes do not form a tree rooted at index 0", path="$.nodes")
    std = doc.get("standardization")
    names = doc.get("feature_names")
    return GeoTree(
        n_features=n_features,
        nodes=nodes,
        config=doc.get("config") or {},
        standardization=tuple(tuple(s) for s in std) if std else None,
        feature_names=tuple(names) if names else None,
    )
