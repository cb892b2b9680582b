"""Synthetic geospatial regression data with spatially varying coefficients.

Points sit on a jittered square grid. Attributes mix a smooth spatial field
with white noise, the target is a locally linear model whose coefficients
switch between regimes across vertical bands (with a narrow logistic
transition), and the noise blends a smooth field with white noise so its
spatial autocorrelation is tunable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# per-regime (intercept, slopes...) cycled when there are more regimes than rows
_REGIME_TABLE = np.array([
    [0.0, 2.0, 1.0, -1.0, 0.5, 0.0, 1.0],
    [3.0, -2.0, 0.0, 1.0, -0.5, 1.5, 0.0],
    [-2.0, 0.5, -1.5, 0.0, 1.0, -1.0, 2.0],
])


@dataclass(frozen=True)
class SynthParams:
    n: int = 400
    extent: float = 100_000.0  # metres, side of the square study area
    regimes: int = 2
    n_attributes: int = 6
    noise: float = 0.5
    autocorrelation: float = 0.8  # share of noise variance from the smooth field
    attribute_smoothness: float = 0.5  # share of attribute variance from a smooth field
    length_scale: float = 0.15  # of the extent, for smooth fields
    transition: float = 0.02  # of the extent, width of the regime boundary
    seed: int = 0

    def __post_init__(self):
        if self.n < 50:
            raise ParameterError("synthetic datasets need n >= 50")
        if self.regimes < 1 or self.n_attributes < 1:
            raise ParameterError("regimes and n_attributes must be positive")
        if not (0 <= self.autocorrelation <= 1 and 0 <= self.attribute_smoothness <= 1):
            raise ParameterError("autocorrelation and attribute_smoothness lie in [0, 1]")
        if self.noise < 0 or self.extent <= 0:
            raise ParameterError("noise must be >= 0 and extent > 0")


def regime_coefficients(regimes, n_attributes):
    """(regimes, 1 + n_attributes) table of intercepts and slopes."""
    rows = []
    for r in range(regimes):
        base = _REGIME_TABLE[r % len(_REGIME_TABLE)]
        row = np.resize(base[1:], n_attributes)
        rows.append(np.concatenate([[base[0] + 1.5 * (r // len(_REGIME_TABLE))], row]))
    return np.array(rows)


def _smooth_field(rng, locs, length, n_features=256):
    """Unit-variance stationary Gaussian-like field via random Fourier features."""
    omega = rng.normal(scale=1.0 / length, size=(n_features, 2))
    phase = rng.uniform(0, 2 * np.pi, size=n_features)
    f = np.sqrt(2.0 / n_features) * np.cos(locs @ omega.T + phase).sum(axis=1)
    return (f - f.mean()) / f.std()


def regime_weights(x, params: SynthParams):
    """(n, regimes) soft membership of each point in each vertical band."""
    if params.regimes == 1:
        return np.ones((x.size, 1))
    edges = np.linspace(0, params.extent, params.regimes + 1)[1:-1]
    width = params.transition * params.extent
    # cumulative logistic steps: w_r = P(band >= r) - P(band >= r+1)
    steps = 1.0 / (1.0 + np.exp(-(x[:, None] - edges[None, :]) / width))
    upper = np.column_stack([np.ones(x.size), steps, np.zeros(x.size)])
    return upper[:, :-1] - upper[:, 1:]


def generate(params: SynthParams) -> dict:
    """Columns ``id, x, y, a1..ap, target`` plus the true local coefficients."""
    rng = np.random.default_rng(params.seed)
    side = math.ceil(math.sqrt(params.n))
    cell = params.extent / side
    cells = rng.choice(side * side, size=params.n, replace=False)
    gx, gy = cells % side, cells // side
    jitter = rng.uniform(-0.4, 0.4, size=(params.n, 2)) * cell
    locs = np.column_stack([(gx + 0.5) * cell, (gy + 0.5) * cell]) + jitter
    length = params.length_scale * params.extent
    s = params.attribute_smoothness
    attrs = np.column_stack([
        math.sqrt(s) * _smooth_field(rng, locs, length) + math.sqrt(1 - s) * rng.normal(size=params.n)
        for _ in range(params.n_attributes)
    ])
    table = regime_coefficients(params.regimes, params.n_attributes)
    beta = regime_weights(locs[:, 0], params) @ table  # n x (1 + p)
    signal = beta[:, 0] + (beta[:, 1:] * attrs).sum(axis=1)
    rho = params.autocorrelation
    eps = math.sqrt(rho) * _smooth_field(rng, locs, length) + \
        math.sqrt(1 - rho) * rng.normal(size=params.n)
    target = signal + params.noise * eps
    cols = {"id": [f"s{i:05d}" for i in range(params.n)], "x": locs[:, 0], "y": locs[:, 1]}
    for j in range(params.n_attributes):
        cols[f"a{j + 1}"] = attrs[:, j]
    cols["target"] = target
    return {"columns": cols, "beta": beta}


def write_csv(columns: dict, path):
    names = list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(names)
        for i in range(len(columns["id"])):
            out.writerow([columns[k][i] if k == "id" else repr(float(columns[k][i]))
                          for k in names])


def schema_for(columns: dict) -> dict:
    attrs = [k for k in columns if k not in ("id", "x", "y", "target")]
    return {"id": "id", "loc": ("x", "y"), "target": "target", "attributes": attrs}


def to_dataset(columns: dict):
    """Unstandardized Dataset straight from generated columns."""
    from .dataset import Dataset

    names = [k for k in columns if k not in ("id", "target")]
    return Dataset(feature_names=tuple(names), loc_idx=(0, 1),
                   X=np.column_stack([columns[k] for k in names]),
                   y=np.asarray(columns["target"]), ids=tuple(columns["id"]),
                   target_name="target")
