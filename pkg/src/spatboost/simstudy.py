"""Monte-Carlo study: data-generating process, metrics, replication driver.

Seed derivation
---------------
``ScenarioConfig.seed`` feeds ``numpy.random.SeedSequence``; its
``generate_state(n_sim)`` words are the replication seeds. A replication
seed ``r`` drives the training draw through ``SeedSequence([r, 0])``, the
test draw through ``SeedSequence([r, 1])`` and the subsampling folds of every
fit through ``FitConfig.seed = r`` (see ``pipeline``). Any single
replication can thus be replayed from ``(cfg, r)`` alone.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .boost import DesignBlock
from .errors import SpatBoostError
from .family import SpatialErrorStructure, log_det_precision
from .pipeline import VARIANTS, config_for_variant, fit_sdem, predict
from .weights import WeightMatrix, build_circular, row_normalize, spatial_lag

__all__ = [
    "ScenarioConfig",
    "MetricsTable",
    "TRUE_INTERCEPT",
    "TRUE_EFFECTS",
    "generate_dgp",
    "selection_metrics",
    "estimation_metrics",
    "prediction_metrics",
    "replication_seeds",
    "run_replication",
    "run_study",
]

log = logging.getLogger(__name__)

TRUE_INTERCEPT = 1.0
TRUE_EFFECTS = {"X1": 3.5, "X2": -2.5, "W.X1": -4.0, "W.X2": 3.0}
OLS_VARIANTS = ("ls-gb", "fgls")
WORKERS_ENV = "SPATBOOST_WORKERS"


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 400
    q: int = 20
    lam: float = 0.4
    sigma2: float = 1.0
    K: int = 5
    n_sim: int = 100
    n_test: int = 400
    variants: tuple = VARIANTS
    seed: int = 1
    m_max: int = 1000
    folds: int = 25
    learning_rate: float = 0.1
    tau: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        if self.q < 4 or self.q % 2:
            raise ValueError(f"q must be even and >= 4 (half covariates, half lags), got {self.q}")
        if not abs(self.lam) < 1:
            raise ValueError(f"|lambda| must be < 1, got {self.lam}")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")
        if self.n <= 2 * self.K or self.n_test <= 2 * self.K:
            raise ValueError(f"circular weights need n > 2K (n={self.n}, n_test={self.n_test}, K={self.K})")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ValueError(f"unknown variants {sorted(unknown)}")

    @property
    def high_dimensional(self) -> bool:
        return self.q + 1 > self.n

    def feasible_variants(self) -> tuple:
        if not self.high_dimensional:
            return self.variants
        return tuple(v for v in self.variants if v not in OLS_VARIANTS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = list(self.variants)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)


def covariate_names(p: int) -> list:
    return [f"X{i + 1}" for i in range(p)]


def lag_names(names) -> list:
    return [f"W.{nm}" for nm in names]


def _weights(n: int, K: int) -> WeightMatrix:
    return row_normalize(build_circular(n, K))


def generate_dgp(cfg: ScenarioConfig, rep_seed: int, split: str = "train"):
    """Draw one data set.

    ``y = 1 + 3.5 X1 - 2.5 X2 - 4 WX1 + 3 WX2 + u``, ``u = (I - lam W)^{-1} eps``,
    ``X ~ U(-2, 2)`` iid, ``eps ~ N(0, sigma2)``, W row-normalized circular.

    Returns
    -------
    y : ndarray
    Z : DesignBlock with ``truth_mask`` set on the four informative columns
    W : WeightMatrix
    eps : ndarray
        The innovations, for diagnostics.
    """
    stream = {"train": 0, "test": 1}[split]
    n = cfg.n if split == "train" else cfg.n_test
    rng = np.random.default_rng(np.random.SeedSequence([int(rep_seed), stream]))
    p = cfg.q // 2
    W = _weights(n, cfg.K)
    X = rng.uniform(-2.0, 2.0, size=(n, p))
    eps = rng.normal(0.0, math.sqrt(cfg.sigma2), size=n)
    WX = spatial_lag(W, X)
    if cfg.lam == 0:
        u = eps.copy()
    else:
        A = (sp.identity(n, format="csc") - cfg.lam * W.matrix).tocsc()
        u = splu(A).solve(eps)
    y = TRUE_INTERCEPT + 3.5 * X[:, 0] - 2.5 * X[:, 1] - 4.0 * WX[:, 0] + 3.0 * WX[:, 1] + u
    names = covariate_names(p)
    all_names = names + lag_names(names)
    truth = np.isin(all_names, list(TRUE_EFFECTS))
    Z = DesignBlock(np.hstack([X, WX]), tuple(all_names), truth)
    return y, Z, W, eps


def selection_metrics(selected, truth, q: int):
    """TPR, TNR and FDR in percent. An empty selection has FDR 0."""
    selected, truth = set(selected), set(truth)
    if not truth:
        raise ValueError("truth set must be non-empty")
    tp = len(selected & truth)
    fp = len(selected - truth)
    negatives = q - len(truth)
    tpr = 100.0 * tp / len(truth)
    tnr = 100.0 * (negatives - fp) / negatives if negatives > 0 else 100.0
    fdr = 100.0 * fp / max(len(selected), 1)
    return tpr, tnr, fdr


def estimation_metrics(lambda_hats, lambda_true: float):
    """Bias, MSE and empirical standard error (``n_sim - 1`` divisor)."""
    lh = np.asarray(lambda_hats, dtype=float)
    if lh.size < 2:
        raise ValueError("need at least two replications for the empirical standard error")
    bias = float(lh.mean() - lambda_true)
    mse = float(np.mean((lh - lambda_true) ** 2))
    ese = float(np.sqrt(np.sum((lh - lh.mean()) ** 2) / (lh.size - 1)))
    return bias, mse, ese


def prediction_metrics(y_test, eta_hat, structure: SpatialErrorStructure, W: WeightMatrix | None = None):
    """RMSEP, MAEP and the quasi negative log-likelihood on test data.

    The likelihood uses the variance ``sigma2`` both inside the log and as the
    divisor of the quadratic form:
    ``n/2 (log(2 pi sigma2) + 1) - log|I - lam W| + e'e / (2 sigma2)``
    with ``e = (I - lam W)(y - eta)``.
    """
    y_test = np.asarray(y_test, dtype=float)
    eta_hat = np.asarray(eta_hat, dtype=float)
    if y_test.shape != eta_hat.shape:
        raise ValueError("y_test and eta_hat differ in shape")
    if W is not None and W is not structure.weights:
        structure = SpatialErrorStructure(structure.lam, structure.sigma2, W)
    if y_test.shape[0] != structure.n:
        raise ValueError("test vectors do not match the weight matrix")
    r = y_test - eta_hat
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite values in test data or predictions")
    n = r.size
    rmsep = float(np.sqrt(np.mean(r * r)))
    maep = float(np.mean(np.abs(r)))
    e = structure.precision_factor @ r
    s2 = structure.sigma2
    nll = n / 2.0 * (math.log(2 * math.pi * s2) + 1.0) - log_det_precision(structure) + float(e @ e) / (2 * s2)
    return rmsep, maep, float(nll)


def replication_seeds(cfg: ScenarioConfig) -> list:
    return [int(s) for s in np.random.SeedSequence(int(cfg.seed)).generate_state(cfg.n_sim)]


def run_replication(cfg: ScenarioConfig, rep: int, rep_seed: int) -> list:
    """Fit every feasible variant on one train/test pair; one record per variant."""
    y, Z, W, _ = generate_dgp(cfg, rep_seed, "train")
    y_t, Z_t, W_t, _ = generate_dgp(cfg, rep_seed, "test")
    truth = Z.truth_names()
    records = []
    for variant in cfg.feasible_variants():
        rec = {"rep": rep, "rep_seed": rep_seed, "variant": variant, "ok": False}
        fcfg = config_for_variant(
            variant, m_max=cfg.m_max, folds=cfg.folds, learning_rate=cfg.learning_rate, tau=cfg.tau, seed=rep_seed
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = fit_sdem(Z, y, W, fcfg)
            eta_t = predict(fit, Z_t)
            struct_t = SpatialErrorStructure(fit.lam, fit.sigma2, W_t)
            rmsep, maep, nll = prediction_metrics(y_t, eta_t, struct_t)
        except (SpatBoostError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
            records.append(rec)
            continue
        tpr, tnr, fdr = selection_metrics(fit.selected, truth, Z.q)
        rec.update(
            ok=True, lam_hat=fit.lam, sigma2_hat=fit.sigma2, m_opt=fit.m_opt, m_first=fit.m_first,
            tpr=tpr, tnr=tnr, fdr=fdr, n_selected=len(fit.selected),
            rmsep=rmsep, maep=maep, nll=nll, intercept=fit.intercept,
            coefficients=fit.coef_dict(),
        )
        records.append(rec)
    return records


@dataclass
class MetricsTable:
    """Per-variant aggregates for one scenario, plus the replication records."""

    scenario: ScenarioConfig
    rows: list
    replications: list = field(repr=False, default_factory=list)
    skipped: dict = field(default_factory=dict)

    ROW_FIELDS = (
        "n", "q", "K", "lambda", "variant", "attempted", "succeeded",
        "tpr", "tnr", "fdr", "bias", "mse", "ese", "rmsep", "maep", "nll", "m_opt",
    )
    REP_FIELDS = (
        "n", "q", "K", "lambda", "rep", "rep_seed", "variant", "ok", "lam_hat", "sigma2_hat",
        "m_opt", "m_first", "tpr", "tnr", "fdr", "n_selected", "rmsep", "maep", "nll", "error",
    )

    def row(self, variant: str) -> dict:
        for r in self.rows:
            if r["variant"] == variant:
                return r
        raise KeyError(variant)

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.ROW_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in self.ROW_FIELDS})
        return buf.getvalue()

    def replications_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.REP_FIELDS, lineterminator="\n", extrasaction="ignore")
        if header:
            w.writeheader()
        sc = self.scenario
        for rec in self.replications:
            row = {"n": sc.n, "q": sc.q, "K": sc.K, "lambda": sc.lam, **rec}
            w.writerow({k: _fmt(row.get(k)) for k in self.REP_FIELDS})
        return buf.getvalue()

    def coefficients_csv(self, header: bool = True) -> str:
        """Long table of every coefficient estimate per successful replication, with its true value."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["n", "q", "K", "lambda", "rep", "variant", "name", "estimate", "truth"])
        sc = self.scenario
        for rec in self.replications:
            if not rec.get("ok"):
                continue
            for nm, est in rec["coefficients"].items():
                w.writerow([sc.n, sc.q, sc.K, _fmt(sc.lam), rec["rep"], rec["variant"], nm, _fmt(est),
                            _fmt(TRUE_EFFECTS.get(nm, 0.0))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "skipped": self.skipped, "rows": self.rows}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return v


def _aggregate(cfg: ScenarioConfig, records: list) -> list:
    rows = []
    for variant in cfg.feasible_variants():
        recs = [r for r in records if r["variant"] == variant]
        ok = [r for r in recs if r["ok"]]
        row = {"n": cfg.n, "q": cfg.q, "K": cfg.K, "lambda": cfg.lam, "variant": variant,
               "attempted": len(recs), "succeeded": len(ok)}
        if ok:
            for key in ("tpr", "tnr", "fdr", "rmsep", "maep", "nll", "m_opt"):
                row[key] = float(np.mean([r[key] for r in ok]))
            lams = [r["lam_hat"] for r in ok]
            if len(lams) >= 2:
                row["bias"], row["mse"], row["ese"] = estimation_metrics(lams, cfg.lam)
            else:
                row["bias"] = lams[0] - cfg.lam
                row["mse"] = (lams[0] - cfg.lam) ** 2
                row["ese"] = None
        rows.append(row)
    return rows


def _worker_count(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def _run_one(args):
    cfg, rep, seed = args
    return run_replication(cfg, rep, seed)


def run_study(cfg: ScenarioConfig, workers: int | None = None) -> MetricsTable:
    """Run every replication of a scenario and aggregate.

    Failures inside a replication are recorded and counted, not raised.
    ``workers`` (or the ``SPATBOOST_WORKERS`` environment variable) sets the
    number of worker processes; results do not depend on it.
    """
    seeds = replication_seeds(cfg)
    tasks = [(cfg, rep, seed) for rep, seed in enumerate(seeds)]
    nw = _worker_count(workers)
    if nw > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            chunks = list(pool.map(_run_one, tasks))
    else:
        chunks = [_run_one(t) for t in tasks]
    records = [r for chunk in chunks for r in chunk]
    skipped = {}
    if cfg.high_dimensional:
        for v in cfg.variants:
            if v in OLS_VARIANTS:
                skipped[v] = f"q + 1 > n ({cfg.q + 1} > {cfg.n}): OLS first step is not identified"
                log.info("skipping %s: %s", v, skipped[v])
    return MetricsTable(cfg, _aggregate(cfg, records), records, skipped)


def scenario_grid(base: ScenarioConfig, lambdas=None, ks=None, qs=None) -> list:
    """Cartesian product of overrides, lambda varying fastest."""
    out = []
    for q in qs or [base.q]:
        for K in ks or [base.K]:
            for lam in lambdas or [base.lam]:
                out.append(replace(base, q=int(q), K=int(K), lam=float(lam)))
    return out


def write_tables(tables, outdir) -> dict:
    """Write metrics.csv, replications.csv, coefficients.csv and summary.json; return paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "metrics": os.path.join(outdir, "metrics.csv"),
        "replications": os.path.join(outdir, "replications.csv"),
        "coefficients": os.path.join(outdir, "coefficients.csv"),
        "summary": os.path.join(outdir, "summary.json"),
    }
    with open(paths["metrics"], "w") as fh:
        for i, t in enumerate(tables):
            fh.write(t.to_csv(header=i == 0))
    with open(paths["replications"], "w") as fh:
        for i, t in enumerate(tables):
            fh.write(t.replications_csv(header=i == 0))
    with open(paths["coefficients"], "w") as fh:
        for i, t in enumerate(tables):
            fh.write(t.coefficients_csv(header=i == 0))
    with open(paths["summary"], "w") as fh:
        json.dump({"scenarios": [t.summary() for t in tables]}, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return paths


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o)}")
