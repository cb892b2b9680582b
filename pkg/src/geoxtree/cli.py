"""Command-line entry point: synth, train, cv, explain, ablate, audit.

Runs are configured by a flat ``key = value`` text file (``#`` starts a
comment) plus ``--set key=value`` overrides. Every command writes the fully
resolved configuration to ``config.txt`` in its output directory.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
degeneracy, 5 internal error. Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import ColumnSchema, Dataset, knn_weights, load_csv, zscore
from .errors import ConfigError, DataError, GeoTreeError
from .evaluation import (ABLATIONS, audit, cross_validate, dispersion, r_squared, rmse,
                         run_experiment)
from .gwr import select_bandwidth
from .induction import TreeConfig
from .simnet import consensus, distance_to_similarity, maximize_modularity, pairwise_distances
from .spatial_stats import morans_i
from .synth import SynthParams, generate, write_csv
from .tree import deserialize, serialize
from .treeshap import AttributionMatrix


def _opt_int(text):
    return None if str(text).lower() in ("none", "all", "inf", "") else int(text)


def _opt_float(text):
    return None if str(text).lower() in ("none", "") else float(text)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _grid(text):
    """``"5:3, 10:5"`` -> [(5, 3), (10, 5)] as (msl, md) pairs."""
    if text in (None, ""):
        return None
    out = []
    for item in str(text).split(","):
        msl, md = item.strip().split(":")
        out.append((int(msl), int(md)))
    return out


def _floats(text):
    if text in (None, ""):
        return None
    return [float(v) for v in str(text).split(",") if v.strip()]


# key -> (parser, default); a None default means unset
KEYS = {
    "data": (str, None),
    "id": (str, "id"),
    "loc": (str, "x,y"),
    "target": (str, "target"),
    "attributes": (str, ""),
    "variant": (str, "feature"),
    "model": (str, "sx"),
    "msl": (int, 5),
    "md": (int, 5),
    "grid": (_grid, None),
    "knn_k": (int, 8),
    "bandwidth": (_opt_float, None),
    "bandwidth_grid": (_floats, None),
    "gamma": (float, 1.0),
    "shortlist_k": (_opt_int, 8),
    "background_size": (int, 256),
    "eval_size": (int, 256),
    "audit_size": (_opt_int, 512),
    "sparsify_k": (_opt_int, 10),
    "n_oblique": (int, 16),
    "n_gauss": (int, 16),
    "seed": (int, 0),
    "folds": (int, 5),
    "fold": (int, 0),
    "no_moran": (_bool, False),
    "no_modularity": (_bool, False),
}


def read_config(path) -> dict:
    """Raw key/value strings from a flat config file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def resolve_config(file_values=None, overrides=()) -> dict:
    raw = dict(file_values or {})
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {}
    for key, (parse, default) in KEYS.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        else:
            cfg[key] = default
    if cfg["model"] not in ("dt", "gt", "sx"):
        raise ConfigError(f"model must be dt, gt or sx, got {cfg['model']!r}")
    if cfg["variant"] not in ("feature", "gwr"):
        raise ConfigError(f"variant must be feature or gwr, got {cfg['variant']!r}")
    for key in ("msl", "knn_k", "background_size", "eval_size", "folds"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be positive")
    return cfg


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list) and v and isinstance(v[0], tuple):
        return ",".join(f"{a}:{b}" for a, b in v)
    if isinstance(v, list):
        return ",".join(repr(x) for x in v)
    return str(v)


def write_config(cfg: dict, out_dir: Path):
    with open(out_dir / "config.txt", "w", encoding="utf-8") as fh:
        for k in sorted(cfg):
            fh.write(f"{k} = {_format(cfg[k])}\n")


def tree_config(cfg: dict) -> TreeConfig:
    kw = dict(msl=cfg["msl"], md=cfg["md"], variant=cfg["variant"],
              shortlist_k=cfg["shortlist_k"], n_oblique=cfg["n_oblique"],
              n_gauss=cfg["n_gauss"], background_size=cfg["background_size"],
              eval_size=cfg["eval_size"], sparsify_k=cfg["sparsify_k"], gamma=cfg["gamma"],
              knn_k=cfg["knn_k"], seed=cfg["seed"])
    if cfg["model"] == "sx":
        kw.update(use_moran=not cfg["no_moran"], use_modularity=not cfg["no_modularity"])
    return TreeConfig.for_model(cfg["model"], **kw)


def schema(cfg: dict) -> ColumnSchema:
    return ColumnSchema.from_mapping({"id": cfg["id"], "loc": cfg["loc"],
                                      "target": cfg["target"],
                                      "attributes": cfg["attributes"] or None})


def load_data(cfg: dict) -> Dataset:
    if not cfg["data"]:
        raise ConfigError("no data file given (use --data or data = ... in the config)")
    return zscore(load_csv(cfg["data"], schema(cfg)))


def _bandwidth(cfg, ds):
    if cfg["bandwidth"] is None and cfg["bandwidth_grid"]:
        return select_bandwidth(ds, cfg["bandwidth_grid"])
    return cfg["bandwidth"]


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_communities(path, dataset: Dataset, rows, labels):
    locs = dataset.locations()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["id", "x", "y", "community"])
        for r, c in zip(rows, labels):
            out.writerow([dataset.ids[r], repr(float(locs[r, 0])), repr(float(locs[r, 1])),
                          int(c)])


def write_audit(aud, dataset, out_dir: Path):
    aud.attributions.to_csv(out_dir / "attributions.csv", dataset.feature_names)
    write_communities(out_dir / "communities.csv", dataset, aud.rows, aud.partition.labels)
    aud.dispersion.to_csv(out_dir / "dispersion.csv")


# commands ----------------------------------------------------------------

def cmd_synth(args):
    params = SynthParams(n=args.n, extent=args.extent, regimes=args.regimes,
                         n_attributes=args.attributes, noise=args.noise,
                         autocorrelation=args.autocorrelation, seed=args.seed)
    g = generate(params)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(g["columns"], out)
    if args.beta:
        names = ["intercept"] + [f"a{j + 1}" for j in range(params.n_attributes)]
        with open(args.beta, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *names])
            for i, row in zip(g["columns"]["id"], g["beta"]):
                w.writerow([i, *(repr(float(v)) for v in row)])
    return 0


def _setup(args):
    values = read_config(args.config) if args.config else {}
    if getattr(args, "data", None):
        values["data"] = args.data
    cfg = resolve_config(values, args.set or ())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out)
    return cfg, out


def cmd_train(args):
    cfg, out = _setup(args)
    ds = load_data(cfg)
    tc = tree_config(cfg)
    exp = run_experiment(ds, tc, folds=cfg["folds"], fold=cfg["fold"],
                         audit_size=cfg["audit_size"], gwr_bandwidth=_bandwidth(cfg, ds))
    (out / "model.json").write_bytes(serialize(exp.tree))
    metrics = exp.metrics.to_dict()
    metrics["model"] = cfg["model"]
    write_json(metrics, out / "metrics.json")
    write_audit(exp.audit, ds.subset(exp.train_rows), out)
    return 0


def cmd_cv(args):
    cfg, out = _setup(args)
    ds = load_data(cfg)
    grid = cfg["grid"] or [(cfg["msl"], cfg["md"])]
    res = cross_validate(ds, tree_config(cfg), grid, cfg["folds"], cfg["seed"],
                         gwr_bandwidth=_bandwidth(cfg, ds))
    res.to_csv(out / "cv_table.csv")
    write_json({"msl": res.msl, "md": res.md,
                "mean_rmse_test": {f"{a}:{b}": v for (a, b), v in res.summary().items()}},
               out / "cv_best.json")
    return 0


def cmd_explain(args):
    cfg, out = _setup(args)
    tree = deserialize(Path(args.model).read_bytes())
    raw = load_csv(cfg["data"], schema(cfg)) if cfg["data"] else None
    if raw is None:
        raise ConfigError("no data file given")
    ds = raw.apply_standardization(tree.standardization) if tree.standardization else zscore(raw)
    if ds.p != tree.n_features:
        raise DataError(f"model expects {tree.n_features} features, data has {ds.p}")
    tc = tree_config(cfg)
    size = cfg["audit_size"] or ds.n
    aud = audit(tree, ds, replace(tc, eval_size=size))
    write_audit(aud, ds, out)
    write_json({"modularity": aud.modularity, "n_communities": aud.partition.n_communities,
                "dispersion_average": aud.dispersion.average}, out / "explain.json")
    return 0


ABLATION_METRICS = ("r2_train", "r2_test", "rmse_train", "rmse_test", "residual_moran_i",
                    "modularity")


def cmd_ablate(args):
    cfg, out = _setup(args)
    ds = load_data(cfg)
    base = tree_config({**cfg, "model": "sx", "no_moran": False, "no_modularity": False})
    bw = _bandwidth(cfg, ds)
    results = {}
    for name, change in ABLATIONS:
        results[name] = run_experiment(ds, replace(base, **change), folds=cfg["folds"],
                                       fold=cfg["fold"], audit_size=cfg["audit_size"],
                                       gwr_bandwidth=bw)
    names = [n for n, _ in ABLATIONS]
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", *names])
        for m in ABLATION_METRICS:
            w.writerow([m, *(repr(float(getattr(results[n].metrics, m))) for n in names)])
    # every configuration used the same split; log it once per row
    tr = results[names[0]].train_rows
    assert all(np.array_equal(results[n].train_rows, tr) for n in names)
    with open(out / "folds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "role"])
        role = np.full(ds.n, "test", dtype=object)
        role[tr] = "train"
        for i, r in zip(ds.ids, role):
            w.writerow([i, r])
    return 0


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path} has no rows")
    return rows


def _col(rows, name, path):
    try:
        return np.array([float(r[name]) for r in rows])
    except KeyError:
        raise DataError(f"{path} lacks column {name!r}", column=name) from None
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value in column {name!r} ({exc})",
                        column=name) from None


def cmd_audit(args):
    """Accuracy, residual Moran and attribution metrics for external predictions."""
    cfg, out = _setup(args)
    rows = _read_table(args.predictions)
    y = _col(rows, "y_true", args.predictions)
    yhat = _col(rows, "y_pred", args.predictions)
    locs = np.column_stack([_col(rows, "x", args.predictions), _col(rows, "y", args.predictions)])
    ids = [r.get("id", str(i)) for i, r in enumerate(rows)]
    weights = knn_weights(locs, cfg["knn_k"])
    report = {"r2": r_squared(y, yhat), "rmse": rmse(y, yhat),
              "residual_moran_i": morans_i(yhat - y, weights), "n": len(rows)}
    if args.attributions:
        arows = _read_table(args.attributions)
        names = [k for k in arows[0] if k.startswith("phi_")]
        if not names:
            raise DataError(f"{args.attributions} has no phi_* columns")
        pos = {i: k for k, i in enumerate(ids)}
        missing = [r["id"] for r in arows if r["id"] not in pos]
        if missing:
            raise DataError(f"no predictions for attributed ids {missing[:5]}")
        sel = np.array([pos[r["id"]] for r in arows])
        phi = np.column_stack([_col(arows, n, args.attributions) for n in names])
        basis_cols = args.basis.split(",") if args.basis else ["x", "y"]
        basis = np.column_stack([_col(rows, c, args.predictions) for c in basis_cols])[sel]
        sd = basis.std(axis=0)
        basis = (basis - basis.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        g = consensus(distance_to_similarity(pairwise_distances(basis)),
                      distance_to_similarity(pairwise_distances(phi)), cfg["sparsify_k"])
        part = maximize_modularity(g, cfg["gamma"], cfg["seed"])
        disp = dispersion(AttributionMatrix(phi=phi, base=0.0), part)
        report["modularity"] = part.q
        report["n_communities"] = part.n_communities
        report["dispersion_average"] = disp.average
        disp.to_csv(out / "dispersion.csv")
        with open(out / "communities.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "community"])
            for r, c in zip(sel, part.labels):
                w.writerow([ids[r], repr(float(locs[r, 0])), repr(float(locs[r, 1])), int(c)])
    write_json(report, out / "metrics.json")
    return 0


# entry point -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="geoxtree",
                                description="Spatially aware self-explaining regression trees.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic geospatial regression dataset")
    s.add_argument("--out", required=True, help="CSV file to write")
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--extent", type=float, default=100_000.0, help="side of the square, metres")
    s.add_argument("--regimes", type=int, default=2)
    s.add_argument("--attributes", type=int, default=6)
    s.add_argument("--noise", type=float, default=0.5)
    s.add_argument("--autocorrelation", type=float, default=0.8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--beta", help="optional CSV for the true local coefficients")
    s.set_defaults(func=cmd_synth)

    def common(sp, data=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a key")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", help="input CSV (overrides the config)")

    for name, func, help_ in (("train", cmd_train, "train and evaluate one model"),
                              ("cv", cmd_cv, "cross-validate (msl, md)"),
                              ("ablate", cmd_ablate, "SX and its two single-term ablations")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.set_defaults(func=func)

    e = sub.add_parser("explain", help="attributions, communities and dispersion for a model")
    common(e)
    e.add_argument("--model", required=True, help="model.json from train")
    e.set_defaults(func=cmd_explain)

    a = sub.add_parser("audit", help="metric battery on external predictions")
    common(a, data=False)
    a.add_argument("--predictions", required=True,
                   help="CSV with id, x, y, y_true, y_pred (+ basis columns)")
    a.add_argument("--attributions", help="CSV with id and phi_* columns")
    a.add_argument("--basis", help="comma list of prediction-file columns for the basis "
                                   "network (default x,y)")
    a.set_defaults(func=cmd_audit)
    return p


def _fail(exc, code):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("row", "column", "path"):
        v = getattr(exc, attr, None)
        if v not in (None, ""):
            err[attr] = v
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GeoTreeError as exc:
        return _fail(exc, exc.exit_code)
    except (FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        return _fail(exc, DataError.exit_code)
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal code
        return _fail(exc, GeoTreeError.exit_code)


if __name__ == "__main__":
    sys.exit(main())
