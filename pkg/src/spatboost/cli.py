"""Command-line interface: ``spatboost {weights,fit,predict,simulate}``.

Exit codes: 0 success, 2 input or validation error, 3 numerical or
estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .boost import DesignBlock
from .errors import (
    DesignError,
    NonIdentificationError,
    RankDeficiencyError,
    SingularMatrixError,
    TopologyError,
)
from .pipeline import VARIANTS, FitConfig, config_for_variant, fit_sdem, fit_slx, predict
from .simstudy import ScenarioConfig, generate_dgp, replication_seeds, run_study, scenario_grid, write_tables
from .weights import (
    build_circular,
    build_knn,
    read_coordinates,
    read_weights,
    row_normalize,
    spatial_lag,
    write_weights,
)

log = logging.getLogger("spatboost")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3

CLI_VARIANTS = VARIANTS + ("slx", "slx-ds")


class InputError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, command: str, config: dict, inputs, started: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): sha256(p) for p in inputs},
        "version": __version__,
        "duration_seconds": round(time.time() - started, 3),
    }
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_table(path):
    """Read a numeric CSV with a header row. Returns (names, n x k array)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise InputError(f"{path}: empty file")
        names = [h.strip() for h in header]
        if len(set(names)) != len(names):
            raise InputError(f"{path}: duplicate column names")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(names):
                raise InputError(f"{path}:{lineno}: expected {len(names)} fields, got {len(rec)}")
            try:
                vals = [float(v) for v in rec]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}:{lineno}: missing or non-finite value")
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return names, np.asarray(rows, dtype=float)


def write_table(path, names, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def build_design(names, data, covariates, weights, lags: bool, transform=None):
    """Design columns from raw covariates, optional ``W.<name>`` lags, optional standardization.

    ``transform`` maps design column name to ``(mean, scale)``; if None and
    standardization is wanted, pass ``transform={}`` and it is filled in.
    """
    idx = {nm: i for i, nm in enumerate(names)}
    missing = [c for c in covariates if c not in idx]
    if missing:
        raise InputError(f"data file lacks columns {missing}")
    X = data[:, [idx[c] for c in covariates]]
    cols, dnames = [X], list(covariates)
    if lags:
        if weights is None:
            raise InputError("model uses lag columns (W.*) but no --weights file was given")
        if weights.n != X.shape[0]:
            raise InputError(f"weights are {weights.n} x {weights.n} but data has {X.shape[0]} rows")
        cols.append(spatial_lag(weights, X))
        dnames += [f"W.{c}" for c in covariates]
    Z = np.hstack(cols)
    if transform is not None:
        if not transform:
            mean = Z.mean(axis=0)
            sd = Z.std(axis=0)
            bad = np.flatnonzero(sd <= 1e-12)
            if bad.size:
                raise InputError(f"column {dnames[bad[0]]!r} is constant; cannot standardize")
            transform.update({nm: (float(m), float(s)) for nm, m, s in zip(dnames, mean, sd)})
        Z = (Z - np.array([transform[nm][0] for nm in dnames])) / np.array([transform[nm][1] for nm in dnames])
    return DesignBlock(Z, tuple(dnames))


# ---------------------------------------------------------------- commands


def cmd_weights(args) -> int:
    if args.mode == "circular":
        if args.n is None:
            raise InputError("--mode circular needs --n")
        W = build_circular(args.n, args.k)
        inputs = []
    else:
        if args.coords is None:
            raise InputError("--mode knn needs --coords")
        W = build_knn(read_coordinates(args.coords), args.k)
        inputs = [args.coords]
    if args.normalize:
        W = row_normalize(W)
    write_weights(W, args.out)
    print(f"rows={W.n} nnz={W.nnz} max_row_sum={W.row_sums().max():.12g}")
    log.debug("wrote %s (inputs: %s)", args.out, inputs)
    return EXIT_OK


def _fit_config(args) -> FitConfig:
    common = dict(learning_rate=args.step, m_max=args.mmax, folds=args.folds, tau=args.tau, seed=args.seed)
    if args.variant == "slx":
        return FitConfig(first_step="boost", variant="slx", **common)
    if args.variant == "slx-ds":
        return FitConfig(first_step="boost_deselect", variant="slx-ds", **common)
    return config_for_variant(args.variant, **common)


def cmd_fit(args) -> int:
    started = time.time()
    names, data = read_table(args.data)
    if args.response not in names:
        raise InputError(f"response {args.response!r} not in {args.data}")
    covariates = [c for c in names if c != args.response]
    if args.columns:
        covariates = [c.strip() for c in args.columns.split(",") if c.strip()]
    if not covariates:
        raise InputError("no covariates")
    spatial = args.variant not in ("slx", "slx-ds")
    W = None
    if args.weights is not None:
        W = read_weights(args.weights, n=data.shape[0])
        if W.n != data.shape[0]:
            raise InputError(f"weights are {W.n} x {W.n} but data has {data.shape[0]} rows")
        if not W.row_normalized:
            raise InputError("weights must be row-normalized (rows summing to one)")
    elif spatial:
        raise InputError(f"variant {args.variant} needs --weights")
    transform = {} if args.standardize else None
    Z = build_design(names, data, covariates, W, args.lags, transform)
    y = data[:, names.index(args.response)]
    cfg = _fit_config(args)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_sdem(Z, y, W, cfg) if spatial else fit_slx(Z, y, cfg)
    for w in caught:
        log.warning("%s", w.message)
    fitted = predict(fit, Z)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "coefficients.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "estimate"])
        w.writerow(["(Intercept)", repr(fit.intercept)])
        for nm, c in zip(fit.names, fit.coefficients):
            w.writerow([nm, repr(float(c))])
    doc = {
        "variant": args.variant,
        "response": args.response,
        "covariates": covariates,
        "lags": bool(args.lags),
        "standardize": transform,
        "names": list(fit.names),
        "intercept": fit.intercept,
        "coefficients": [float(c) for c in fit.coefficients],
        "lambda": fit.lam,
        "sigma2": fit.sigma2,
        "m_opt": fit.m_opt,
        "m_first": fit.m_first,
        "selected": list(fit.selected),
        "first_step_selected": list(fit.first_step_selected),
        "risk_path": [float(r) for r in fit.risk_path],
        "fitted": [float(v) for v in fitted],
        "n": int(Z.n),
    }
    (out / "fit.json").write_text(json.dumps(doc, indent=1) + "\n")
    inputs = [args.data] + ([args.weights] if args.weights else [])
    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_manifest(out, "fit", config, inputs, started)
    print(f"variant={args.variant} lambda={fit.lam:.6f} sigma2={fit.sigma2:.6f} m_opt={fit.m_opt} "
          f"selected={len(fit.selected)}/{Z.q}")
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model = json.loads(Path(args.model).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model {args.model}: {exc}") from None
    names, data = read_table(args.data)
    W = read_weights(args.weights, n=data.shape[0]) if args.weights else None
    transform = model.get("standardize")
    Z = build_design(names, data, model["covariates"], W, model["lags"], transform)
    if list(Z.names) != model["names"]:
        raise InputError("data columns do not reproduce the model's design")
    eta = model["intercept"] + Z.columns @ np.asarray(model["coefficients"], dtype=float)
    if args.out:
        write_table(args.out, ["eta"], [eta])
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["eta"])
        for v in eta:
            w.writerow([repr(float(v))])
    resp = model.get("response")
    if resp in names:
        r = data[:, names.index(resp)] - eta
        print(f"RMSEP={math.sqrt(float(np.mean(r * r))):.10g} MAEP={float(np.mean(np.abs(r))):.10g}",
              file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def _parse_list(text, cast):
    if text is None:
        return None
    return [cast(t) for t in str(text).split(",") if t.strip()]


def load_scenario(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise InputError("scenario file must hold a JSON object")
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    return raw


def cmd_simulate(args) -> int:
    started = time.time()
    base = load_scenario(args.scenario) if args.scenario else {}
    lambdas = _parse_list(args.lam, float) or _as_list(base.pop("lam", None), float)
    qs = _parse_list(args.q, int) or _as_list(base.pop("q", None), int)
    ks = _parse_list(args.k, int) or _as_list(base.pop("K", None), int)
    for key, val in (("n_sim", args.nsim), ("seed", args.seed), ("m_max", args.mmax), ("folds", args.folds)):
        if val is not None:
            base[key] = val
    if args.variants:
        base["variants"] = _parse_list(args.variants, str)
    try:
        proto = ScenarioConfig.from_dict(base)
        scenarios = scenario_grid(proto, lambdas, ks, qs)
        for sc in scenarios:
            ScenarioConfig.from_dict(sc.to_dict())
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid scenario: {exc}") from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.scenario] if args.scenario else []
    if args.emit_data:
        emit_data(scenarios[0], Path(args.emit_data))
        write_manifest(args.emit_data, "simulate --emit-data", scenarios[0].to_dict(), inputs, started)

    tables = []
    for sc in scenarios:
        if sc.high_dimensional:
            dropped = [v for v in sc.variants if v not in sc.feasible_variants()]
            if dropped:
                log.warning("q=%d > n=%d: skipping %s (OLS first step infeasible)", sc.q, sc.n, ", ".join(dropped))
        t0 = time.time()
        table = run_study(sc, workers=args.workers)
        log.info("scenario q=%d K=%d lambda=%g done in %.1fs", sc.q, sc.K, sc.lam, time.time() - t0)
        tables.append(table)
    paths = write_tables(tables, out)
    config = {"scenarios": [sc.to_dict() for sc in scenarios], "workers": args.workers}
    write_manifest(out, "simulate", config, inputs, started)
    print(f"{len(scenarios)} scenario(s) -> {paths['metrics']}")
    for t in tables:
        for row in t.rows:
            print(_row_line(row))
    return EXIT_OK


def _as_list(val, cast):
    if val is None:
        return None
    if isinstance(val, (list, tuple)):
        return [cast(v) for v in val]
    return [cast(val)]


def _row_line(row) -> str:
    def f(key, spec):
        v = row.get(key)
        return "-" if v is None else format(v, spec)

    return (f"q={row['q']} K={row['K']} lambda={row['lambda']:g} {row['variant']:>6}: "
            f"ok={row['succeeded']}/{row['attempted']} TPR={f('tpr', '.1f')} TNR={f('tnr', '.1f')} "
            f"FDR={f('fdr', '.1f')} bias={f('bias', '.4f')} RMSEP={f('rmsep', '.4f')} NLL={f('nll', '.2f')}")


def emit_data(sc: ScenarioConfig, outdir: Path) -> None:
    """Dump replication 0 (train and test) as CSV plus its weight files."""
    outdir.mkdir(parents=True, exist_ok=True)
    seed = replication_seeds(replace(sc, n_sim=1))[0]
    for split in ("train", "test"):
        y, Z, W, _ = generate_dgp(sc, seed, split)
        p = Z.q // 2
        write_table(outdir / f"{split}.csv", list(Z.names[:p]) + ["y"], [*Z.columns[:, :p].T, y])
        write_weights(W, outdir / f"{split}_weights.csv")
    (outdir / "truth.json").write_text(json.dumps(
        {"intercept": 1.0, "effects": {"X1": 3.5, "X2": -2.5, "W.X1": -4.0, "W.X2": 3.0},
         "lambda": sc.lam, "sigma2": sc.sigma2, "rep_seed": seed}, indent=2) + "\n")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spatboost", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("weights", help="build a spatial weight matrix")
    w.add_argument("--mode", choices=("circular", "knn"), required=True)
    w.add_argument("--n", type=int)
    w.add_argument("--k", type=int, required=True)
    w.add_argument("--coords", help="CSV with header id,x,y (knn mode)")
    w.add_argument("--normalize", action="store_true", help="row-normalize")
    w.add_argument("--out", required=True, help="output triplet CSV (i,j,w)")
    w.set_defaults(func=cmd_weights)

    f = sub.add_parser("fit", help="fit a model from a data CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--response", required=True)
    f.add_argument("--weights", help="row-normalized triplet CSV")
    f.add_argument("--variant", choices=CLI_VARIANTS, default="ds-ds")
    f.add_argument("--columns", help="comma-separated covariates (default: all but the response)")
    f.add_argument("--lags", action="store_true", help="append W.<name> lag columns")
    f.add_argument("--standardize", action="store_true", help="center and scale design columns")
    f.add_argument("--step", type=float, default=0.1, help="learning rate")
    f.add_argument("--mmax", type=int, default=1000)
    f.add_argument("--folds", type=int, default=25)
    f.add_argument("--tau", type=float, default=0.01)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="apply a fitted model")
    pr.add_argument("--model", required=True, help="fit.json written by 'fit'")
    pr.add_argument("--data", required=True)
    pr.add_argument("--weights")
    pr.add_argument("--out", help="predictions CSV (default: stdout)")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="run the Monte-Carlo study")
    s.add_argument("--scenario", help="JSON scenario file")
    s.add_argument("--nsim", type=int)
    s.add_argument("--lambda", dest="lam", help="value or comma list")
    s.add_argument("--q", help="value or comma list")
    s.add_argument("--k", help="value or comma list")
    s.add_argument("--seed", type=int)
    s.add_argument("--mmax", type=int)
    s.add_argument("--folds", type=int)
    s.add_argument("--variants", help="comma list out of " + ",".join(VARIANTS))
    s.add_argument("--workers", type=int, help="worker processes (default: $SPATBOOST_WORKERS or 1)")
    s.add_argument("--emit-data", help="directory for one replication's train/test CSVs")
    s.add_argument("--out", default="simulation", help="output directory")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (NonIdentificationError, RankDeficiencyError, SingularMatrixError, FloatingPointError) as exc:
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (InputError, TopologyError, DesignError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
