"""Three-step feasible boosting for models with autoregressive disturbances.

1. Fit ``y = Z delta + u`` ignoring the disturbance structure (OLS, boosting,
   or boosting with deselection) and keep the residuals.
2. Estimate ``(lam, sigma2)`` from the residuals by generalized moments.
3. Boost with the spatial-error loss at the estimated parameters, optionally
   followed by deselection and a refit.

Variant labels: ``ls-gb`` (OLS first step), ``gb-gb`` (boosting first step),
``ds-gb`` (boosting with deselection first), ``ds-ds`` (deselection in both
boosting steps), and ``fgls`` (OLS first step, GLS third step).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .boost import BoostPath, DesignBlock, boost_fit, boost_runs, deselect
from .errors import DesignError, RankDeficiencyError
from .family import SpatialError, SpatialErrorStructure, SquaredError
from .moments import build_moment_system, fit_fgls, nls_estimate
from .weights import WeightMatrix

__all__ = [
    "VARIANTS",
    "FitConfig",
    "FitResult",
    "config_for_variant",
    "tune_mstop",
    "first_step",
    "fit_sdem",
    "fit_slx",
    "predict",
]

log = logging.getLogger(__name__)

VARIANTS = ("ls-gb", "gb-gb", "ds-gb", "ds-ds", "fgls")
_FIRST_STEPS = ("ols", "boost", "boost_deselect")

# stream tags for numpy SeedSequence; kept stable so fits replay exactly
_STREAM_FIRST = 11
_STREAM_THIRD = 13


@dataclass(frozen=True)
class FitConfig:
    first_step: str = "boost_deselect"
    final_deselect: bool = False
    learning_rate: float = 0.1
    m_max: int = 1000
    folds: int = 25
    subsample_fraction: float = 0.5
    tau: float = 0.01
    seed: int = 0
    tune: bool = True
    third_step: str = "boost"  # "boost" or "fgls"
    variant: str = "custom"

    def __post_init__(self):
        if self.first_step not in _FIRST_STEPS:
            raise ValueError(f"first_step must be one of {_FIRST_STEPS}, got {self.first_step!r}")
        if self.third_step not in ("boost", "fgls"):
            raise ValueError(f"third_step must be 'boost' or 'fgls', got {self.third_step!r}")
        if not 0 < self.subsample_fraction < 1:
            raise ValueError("subsample_fraction must lie in (0, 1)")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.m_max < 1:
            raise ValueError("m_max must be >= 1")


def config_for_variant(variant: str, **overrides) -> FitConfig:
    """FitConfig preset for one of the named variants."""
    presets = {
        "ls-gb": dict(first_step="ols"),
        "gb-gb": dict(first_step="boost"),
        "ds-gb": dict(first_step="boost_deselect"),
        "ds-ds": dict(first_step="boost_deselect", final_deselect=True),
        "fgls": dict(first_step="ols", third_step="fgls"),
    }
    if variant not in presets:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return FitConfig(**{**presets[variant], **overrides, "variant": variant})


@dataclass(frozen=True)
class FitResult:
    lam: float
    sigma2: float
    intercept: float
    coefficients: np.ndarray
    names: tuple
    m_opt: int
    variant: str
    risk_path: np.ndarray = field(repr=False)
    m_first: int | None = None
    first_step_selected: tuple = ()

    @property
    def selected(self) -> tuple:
        return tuple(nm for nm, c in zip(self.names, self.coefficients) if c != 0)

    def coef_dict(self) -> dict:
        return dict(zip(self.names, (float(c) for c in self.coefficients)))


def _fold_weights(n: int, folds: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    k = int(np.floor(fraction * n))
    if k < 1 or k >= n:
        raise ValueError(f"subsample of size {k} leaves no in-sample or no held-out points (n={n})")
    Wt = np.zeros((n, folds))
    for f in range(folds):
        Wt[rng.choice(n, size=k, replace=False), f] = 1.0
    return Wt


def tune_mstop(Z: DesignBlock, y, fam, cfg: FitConfig, rng=None) -> int:
    """Stopping iteration minimising the average out-of-sample risk over subsamples.

    Each fold boosts on a random half of the observations (weights 1 in
    sample, 0 out of sample) for ``cfg.m_max`` iterations; the held-out risk
    is the sum of the pointwise risks on the held-out locations, with the
    full-W transform. Candidate stopping points are ``1..m_max``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    Wt = _fold_weights(Z.n, cfg.folds, cfg.subsample_fraction, rng)
    res = boost_runs(Z, y, fam, cfg.m_max, cfg.learning_rate, Wt, holdout=1.0 - Wt)
    curve = res["holdout_risk"].mean(axis=1)
    return int(np.argmin(curve[1:])) + 1


def _rng(cfg: FitConfig, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), stream]))


def _boost_step(Z, y, fam, cfg, stream, deselection):
    """Tune, fit and (optionally) deselect and refit at the tuned stopping point.

    Returns the design actually used for the final fit and its path.
    """
    m_opt = tune_mstop(Z, y, fam, cfg, _rng(cfg, stream)) if cfg.tune else cfg.m_max
    path = boost_fit(Z, y, fam, m_opt, cfg.learning_rate)
    if not deselection:
        return Z, path, m_opt
    report = deselect(path, cfg.tau)
    if not report.retained:
        return None, path, m_opt
    Zr = Z.subset(report.retained)
    return Zr, boost_fit(Zr, y, fam, m_opt, cfg.learning_rate), m_opt


def _expand(Zsub: DesignBlock | None, Z: DesignBlock, coef_sub) -> np.ndarray:
    full = np.zeros(Z.q)
    if Zsub is None:
        return full
    pos = {nm: i for i, nm in enumerate(Z.names)}
    for nm, c in zip(Zsub.names, coef_sub):
        full[pos[nm]] = c
    return full


def _ols(Z: DesignBlock, y):
    n, q = Z.columns.shape
    if q + 1 > n:
        raise RankDeficiencyError(f"OLS needs q + 1 <= n, got q={q}, n={n}; use a boosting first step")
    X = np.column_stack([np.ones(n), Z.columns])
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < q + 1:
        raise RankDeficiencyError(f"design with intercept has rank {rank} < {q + 1}")
    return float(coef[0]), coef[1:]


def first_step(Z: DesignBlock, y, cfg: FitConfig):
    """Fit ignoring the disturbance structure.

    Returns
    -------
    coefficients : ndarray (q,)
    intercept : float
    residuals : ndarray (n,)
    m_opt : int or None
        Stopping iteration for the boosting variants.
    """
    y = np.asarray(y, dtype=float)
    m_opt = None
    if cfg.first_step == "ols":
        intercept, coef = _ols(Z, y)
    else:
        Zf, path, m_opt = _boost_step(
            Z, y, SquaredError(), cfg, _STREAM_FIRST, deselection=cfg.first_step == "boost_deselect"
        )
        intercept = path.intercept if Zf is not None else 0.0
        coef = _expand(Zf, Z, path.coefficients)
    residuals = y - intercept - Z.columns @ coef
    return coef, intercept, residuals, m_opt


def fit_sdem(Z: DesignBlock, y, W: WeightMatrix, cfg: FitConfig) -> FitResult:
    """Feasible three-step fit.

    The caller decides the model through the design: include the lag
    columns ``WX`` for the Durbin error model, leave them out for the plain
    spatial error model.
    """
    y = np.asarray(y, dtype=float)
    if W.n != Z.n:
        raise DesignError(f"W is {W.n} x {W.n} but the design has {Z.n} rows")
    coef1, _, u_tilde, m_first = first_step(Z, y, cfg)
    est = nls_estimate(build_moment_system(u_tilde, W))
    structure = SpatialErrorStructure(est.lam, est.sigma2, W)
    first_sel = tuple(nm for nm, c in zip(Z.names, coef1) if c != 0)

    if cfg.third_step == "fgls":
        intercept, coef = fit_fgls(Z, y, structure)
        return FitResult(est.lam, est.sigma2, intercept, coef, Z.names, 0, cfg.variant,
                         np.empty(0), m_first, first_sel)

    fam = SpatialError(structure)
    Zf, path, m_opt = _boost_step(Z, y, fam, cfg, _STREAM_THIRD, deselection=cfg.final_deselect)
    intercept = path.intercept if Zf is not None else 0.0
    coef = _expand(Zf, Z, path.coefficients)
    log.debug("variant=%s lam=%.4f sigma2=%.4f m_opt=%d", cfg.variant, est.lam, est.sigma2, m_opt)
    return FitResult(est.lam, est.sigma2, intercept, coef, Z.names, m_opt, cfg.variant,
                     np.asarray(path.risk), m_first, first_sel)


def fit_slx(Z: DesignBlock, y, cfg: FitConfig) -> FitResult:
    """Cross-regressive model (lagged covariates, iid errors): squared-error boosting.

    ``cfg.first_step`` selects plain boosting or boosting with deselection;
    the reported ``lam`` is 0 and ``sigma2`` is the residual variance.
    """
    y = np.asarray(y, dtype=float)
    if cfg.first_step == "ols":
        raise ValueError("fit_slx boosts; use first_step='boost' or 'boost_deselect'")
    Zf, path, m_opt = _boost_step(
        Z, y, SquaredError(), cfg, _STREAM_FIRST, deselection=cfg.first_step == "boost_deselect"
    )
    intercept = path.intercept if Zf is not None else 0.0
    coef = _expand(Zf, Z, path.coefficients)
    resid = y - intercept - Z.columns @ coef
    sigma2 = max(float(resid @ resid) / Z.n, 1e-10)
    return FitResult(0.0, sigma2, intercept, coef, Z.names, m_opt, "slx", np.asarray(path.risk))


def predict(fit: FitResult, Z_new: DesignBlock) -> np.ndarray:
    """Trend prediction ``intercept + Z_new @ coefficients`` (no error-field correction)."""
    if tuple(Z_new.names) != tuple(fit.names):
        missing = set(fit.names) ^ set(Z_new.names)
        raise DesignError(
            "design columns do not match the fitted model"
            + (f" (differing: {sorted(missing)[:5]})" if missing else " (order differs)")
        )
    return fit.intercept + Z_new.columns @ fit.coefficients


def with_seed(cfg: FitConfig, seed: int) -> FitConfig:
    return replace(cfg, seed=int(seed))
