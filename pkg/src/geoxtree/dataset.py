"""Tabular geospatial data, z-scoring, k-NN spatial weights and fold splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import DataError, DegenerateColumnError, ParameterError, SchemaError


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns to roles.

    ``attributes=None`` takes every column that is not the id, a coordinate
    or the target.
    """

    id: str
    loc: tuple[str, str]
    target: str
    attributes: tuple[str, ...] | None = None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ColumnSchema":
        try:
            loc = mapping["loc"]
            if isinstance(loc, str):
                loc = [s.strip() for s in loc.split(",")]
            attrs = mapping.get("attributes")
            if isinstance(attrs, str):
                attrs = [s.strip() for s in attrs.split(",") if s.strip()]
            return cls(
                id=mapping.get("id", "id"),
                loc=tuple(loc),
                target=mapping["target"],
                attributes=tuple(attrs) if attrs else None,
            )
        except KeyError as exc:
            raise SchemaError(f"schema is missing key {exc.args[0]!r}") from None


@dataclass(frozen=True)
class Dataset:
    feature_names: tuple[str, ...]
    loc_idx: tuple[int, int]
    X: np.ndarray
    y: np.ndarray
    ids: tuple[str, ...]
    target_name: str = "target"
    # (mean, std) per feature column, None until zscore() has run
    standardization: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DataError(f"inconsistent shapes X{X.shape} y{y.shape}")
        if X.shape[1] != len(self.feature_names):
            raise DataError("feature_names does not match X columns")
        if len(self.ids) != X.shape[0]:
            raise DataError("ids does not match row count")
        if len(self.loc_idx) != 2 or len(set(self.loc_idx)) != 2:
            raise SchemaError("exactly two distinct locational columns are required")
        if not all(0 <= i < X.shape[1] for i in self.loc_idx):
            raise SchemaError(f"locational indices {self.loc_idx} out of range")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("non-finite values in X or y")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate row ids")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "loc_idx", tuple(int(i) for i in self.loc_idx))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def raw_X(self) -> np.ndarray:
        """Feature matrix in original units."""
        if self.standardization is None:
            return self.X.copy()
        mean, std = np.array(self.standardization).T
        return self.X * std + mean

    def locations(self) -> np.ndarray:
        """n x 2 planar coordinates in original units."""
        return self.raw_X()[:, list(self.loc_idx)]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return replace(self, X=self.X[rows], y=self.y[rows],
                       ids=tuple(self.ids[i] for i in rows))

    def apply_standardization(self, standardization) -> "Dataset":
        """Standardize raw features with externally supplied (mean, std) pairs."""
        if self.standardization is not None:
            raise DataError("dataset is already standardized")
        mean, std = np.array(standardization, dtype=float).reshape(-1, 2).T
        if mean.shape[0] != self.p:
            raise DataError("standardization arity does not match features")
        return replace(self, X=(self.X - mean) / std,
                       standardization=tuple((float(m), float(s)) for m, s in zip(mean, std)))


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"cannot parse {text!r} as a number", row=row, column=column) from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {text!r}", row=row, column=column)
    return value


def load_csv(path, schema: ColumnSchema | dict) -> Dataset:
    """Read a header-first, comma-separated UTF-8 file into an unstandardized Dataset.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    if isinstance(schema, dict):
        schema = ColumnSchema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        needed = [schema.id, *schema.loc, schema.target, *(schema.attributes or ())]
        for name in needed:
            if name not in header:
                raise SchemaError(f"missing column {name!r} in {path.name}")
        if schema.attributes is None:
            skip = {schema.id, schema.target}
            features = [h for h in header if h not in skip]
        else:
            chosen = set(schema.loc) | set(schema.attributes)
            features = [h for h in header if h in chosen]
        if len(features) < 3:
            raise SchemaError("need two coordinate columns and at least one attribute")
        col = {h: i for i, h in enumerate(header)}
        feat_cols = [col[f] for f in features]
        ids, rows, target = [], [], []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(record)}", row=r)
            ids.append(record[col[schema.id]].strip())
            rows.append([_parse_float(record[c], r, header[c]) for c in feat_cols])
            target.append(_parse_float(record[col[schema.target]], r, schema.target))
    seen = {}
    for r, i in enumerate(ids, start=1):
        if i in seen:
            raise DataError(f"duplicate id {i!r} (first seen at row {seen[i]})", row=r,
                            column=schema.id)
        seen[i] = r
    if not rows:
        raise DataError(f"{path} has no data rows")
    return Dataset(
        feature_names=tuple(features),
        loc_idx=(features.index(schema.loc[0]), features.index(schema.loc[1])),
        X=np.array(rows),
        y=np.array(target),
        ids=tuple(ids),
        target_name=schema.target,
    )


def zscore(dataset: Dataset) -> Dataset:
    """Standardize every feature column with the population standard deviation.

    The target is left in response units.
    """
    if dataset.standardization is not None:
        raise DataError("dataset is already standardized")
    X = dataset.X
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    for j, s in enumerate(std):
        # relative test so large-magnitude constant columns are caught
        if s <= 1e-12 * max(1.0, abs(mean[j])):
            raise DegenerateColumnError(dataset.feature_names[j])
    return replace(dataset, X=(X - mean) / std,
                   standardization=tuple((float(m), float(s)) for m, s in zip(mean, std)))


def unstandardize(dataset: Dataset) -> Dataset:
    if dataset.standardization is None:
        return dataset
    return replace(dataset, X=dataset.raw_X(), standardization=None)


@dataclass(frozen=True)
class SpatialWeights:
    """Sparse symmetric nonnegative adjacency with zero diagonal."""

    matrix: sparse.csr_array
    n: int = field(init=False)
    W: float = field(init=False)

    def __post_init__(self):
        m = sparse.csr_array(self.matrix, dtype=float)
        m.eliminate_zeros()
        if m.shape[0] != m.shape[1]:
            raise DataError("weights must be square")
        if m.nnz and (m.data < 0).any() or not np.isfinite(m.data).all():
            raise DataError("weights must be finite and nonnegative")
        if m.diagonal().any():
            raise DataError("weights must have a zero diagonal")
        if abs(m - m.T).sum() > 1e-12 * max(1.0, m.sum()):
            raise DataError("weights must be symmetric")
        if m.sum() <= 0:
            raise DataError("weights must have positive total")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "n", m.shape[0])
        object.__setattr__(self, "W", float(m.sum()))

    @property
    def entries(self):
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return list(zip(coo.row[order].tolist(), coo.col[order].tolist(),
                        coo.data[order].tolist()))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["i", "j", "w"])
            for i, j, w in self.entries:
                out.writerow([i, j, repr(w)])


def _knn_rows(locations: np.ndarray, k: int) -> np.ndarray:
    """Indices of each row's k nearest other rows, ties to the lower index."""
    n = locations.shape[0]
    tree = cKDTree(locations)
    q = min(n, k + 6)
    dist, idx = tree.query(locations, k=q)
    out = np.empty((n, k), dtype=int)
    for i in range(n):
        d, j = dist[i], idx[i]
        keep = j != i
        d, j = d[keep], j[keep]
        order = np.lexsort((j, d))
        d, j = d[order], j[order]
        # the k-th distance is tied with the farthest returned one; other rows at that
        # distance may be missing from the query, so fall back to a full scan
        if q < n and d[k - 1] >= d[-1]:
            d = np.sqrt(((locations - locations[i]) ** 2).sum(axis=1))
            j = np.arange(n)
            keep = j != i
            d, j = d[keep], j[keep]
            order = np.lexsort((j, d))
            j = j[order]
        out[i] = j[:k]
    return out


def knn_weights(locations, k: int = 8) -> SpatialWeights:
    """Binary k-NN adjacency, symmetrized by logical OR."""
    locations = np.asarray(locations, dtype=float)
    n = locations.shape[0]
    if k < 1 or k >= n:
        raise ParameterError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
    if not np.isfinite(locations).all():
        raise DataError("non-finite coordinates")
    nbrs = _knn_rows(locations, k)
    rows = np.repeat(np.arange(n), k)
    a = sparse.csr_array((np.ones(n * k), (rows, nbrs.ravel())), shape=(n, n))
    sym = ((a + a.T) > 0).astype(float)
    return SpatialWeights(sparse.csr_array(sym))


def kfold_indices(n: int, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffled k-fold split; the first ``n % folds`` folds get one extra row."""
    if folds < 2:
        raise ParameterError("folds must be at least 2")
    if folds > n:
        raise ParameterError(f"folds ({folds}) exceeds sample count ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = np.full(folds, n // folds)
    sizes[: n % folds] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    out = []
    for f in range(folds):
        test = np.sort(perm[bounds[f]:bounds[f + 1]])
        train = np.sort(np.concatenate([perm[:bounds[f]], perm[bounds[f + 1]:]]))
        out.append((train, test))
    return out


def prepare_king_county(src, dst) -> int:
    """Convert the public King County house-sales export to this package's layout.

    Writes ``id,x,y,BTH,LIV,LOT,GRA,CON,AGE,price`` with Web Mercator metres for
    x/y, age relative to the 2015 sale year and log sale price. Row ids are
    row positions because the export repeats house ids for resales.
    """
    radius = 6378137.0
    count = 0
    with open(src, newline="", encoding="utf-8") as fin, \
            open(dst, "w", newline="", encoding="utf-8") as fout:
        reader = csv.DictReader(fin)
        out = csv.writer(fout)
        out.writerow(["id", "x", "y", "BTH", "LIV", "LOT", "GRA", "CON", "AGE", "price"])
        for r, rec in enumerate(reader):
            lon = math.radians(float(rec["long"]))
            lat = math.radians(float(rec["lat"]))
            x = radius * lon
            y = radius * math.log(math.tan(math.pi / 4 + lat / 2))
            out.writerow([r, repr(x), repr(y), rec["bathrooms"], rec["sqft_living"],
                          rec["sqft_lot"], rec["grade"], rec["condition"],
                          2015 - int(float(rec["yr_built"])),
                          repr(math.log(float(rec["price"])))])
            count += 1
    return count
