"""Component-wise gradient boosting with simple linear base-learners.

Each base-learner regresses the negative gradient on one design column plus
its own intercept. The model intercept is the accumulated sum of the
intercept parts of the selected fits.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DesignError, DeselectionWarning

__all__ = [
    "DesignBlock",
    "BoostPath",
    "DeselectionReport",
    "fit_baselearner",
    "boost_fit",
    "boost_runs",
    "coefficients_at",
    "risk_attribution",
    "deselect",
]

_MIN_VARIANCE = 1e-12


@dataclass(frozen=True)
class DesignBlock:
    """Design matrix ``Z = [X, WX]`` with column names.

    ``truth_mask`` flags the informative columns and is only known in
    simulations.
    """

    columns: np.ndarray
    names: tuple
    truth_mask: np.ndarray | None = None

    def __post_init__(self):
        Z = np.array(self.columns, dtype=float, copy=True)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise DesignError(f"design must be a non-empty n x q matrix, got shape {Z.shape}")
        names = tuple(str(s) for s in self.names)
        if len(names) != Z.shape[1]:
            raise DesignError(f"{Z.shape[1]} columns but {len(names)} names")
        if len(set(names)) != len(names):
            raise DesignError("column names must be unique")
        if not np.all(np.isfinite(Z)):
            raise DesignError("design contains non-finite values")
        zero = np.flatnonzero(~Z.any(axis=0))
        if zero.size:
            raise DesignError(f"column {names[zero[0]]!r} is identically zero")
        Z.setflags(write=False)
        object.__setattr__(self, "columns", Z)
        object.__setattr__(self, "names", names)
        if self.truth_mask is not None:
            mask = np.asarray(self.truth_mask, dtype=bool)
            if mask.shape != (Z.shape[1],):
                raise DesignError("truth_mask must have one flag per column")
            object.__setattr__(self, "truth_mask", mask)

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def q(self) -> int:
        return self.columns.shape[1]

    def subset(self, idx) -> "DesignBlock":
        idx = np.asarray(sorted(int(i) for i in idx), dtype=int)
        if idx.size == 0:
            raise DesignError("cannot build an empty design")
        mask = None if self.truth_mask is None else self.truth_mask[idx]
        return DesignBlock(self.columns[:, idx], tuple(self.names[i] for i in idx), mask)

    def truth_names(self) -> set:
        if self.truth_mask is None:
            return set()
        return {nm for nm, t in zip(self.names, self.truth_mask) if t}


@dataclass(frozen=True)
class BoostPath:
    """Record of a boosting run.

    ``intercept_increments`` and ``slope_increments`` are the unscaled fits of
    the selected base-learner; the model moves by ``learning_rate`` times them.
    ``risk`` has ``m_stop + 1`` entries, ``risk[0]`` being the empty-model risk.
    """

    names: tuple
    learning_rate: float
    selected: np.ndarray
    intercept_increments: np.ndarray
    slope_increments: np.ndarray
    risk: np.ndarray
    intercept: float = field(init=False)
    coefficients: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("selected", "intercept_increments", "slope_increments", "risk"):
            arr = np.asarray(getattr(self, name)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        icpt, coef = _partial_sums(self, self.m_stop)
        coef.setflags(write=False)
        object.__setattr__(self, "intercept", icpt)
        object.__setattr__(self, "coefficients", coef)

    @property
    def m_stop(self) -> int:
        return int(self.selected.shape[0])

    @property
    def q(self) -> int:
        return len(self.names)

    def truncate(self, m: int) -> "BoostPath":
        """The path as it stood after ``m`` iterations."""
        _check_iteration(self, m)
        return BoostPath(
            self.names,
            self.learning_rate,
            self.selected[:m],
            self.intercept_increments[:m],
            self.slope_increments[:m],
            self.risk[: m + 1],
        )


@dataclass(frozen=True)
class DeselectionReport:
    attributions: np.ndarray
    tau: float
    retained: tuple
    total_reduction: float

    def retained_names(self, names) -> list:
        return [names[j] for j in self.retained]


def fit_baselearner(z, v, weights=None, name=None):
    """Weighted least squares of ``v`` on ``(1, z)``.

    Returns
    -------
    intercept, slope, rss : float
    """
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.ones_like(z) if weights is None else np.asarray(weights, dtype=float)
    sw = w.sum()
    zbar = (w @ z) / sw
    vbar = (w @ v) / sw
    zc = z - zbar
    szz = w @ (zc * zc)
    if szz / sw <= _MIN_VARIANCE:
        label = f"column {name!r}" if name is not None else "base-learner column"
        raise DesignError(f"{label} is (nearly) constant on the weighted sample")
    slope = (w @ (zc * (v - vbar))) / szz
    intercept = vbar - slope * zbar
    res = v - intercept - slope * z
    return float(intercept), float(slope), float(w @ (res * res))


def boost_runs(Z: DesignBlock, y, fam, m_stop: int, s: float, weights, holdout=None):
    """Run several weighted boosting fits side by side.

    ``weights`` is an ``n x F`` array, one column of observation weights per
    run; all runs share the design and the family. The negative gradient of
    run ``f`` is that of its weighted risk ``sum_i w_if e_i^2 / scale`` with
    ``e = P (y - eta)``; for 0/1 weights on the in-sample rows this is the
    usual in-sample gradient.

    If ``holdout`` (``n x F``) is given, the risk on those weights is
    tracked for every iteration as well.

    Returns
    -------
    dict with ``selected``, ``a``, ``b`` (``m_stop x F``), ``risk`` and
    optionally ``holdout_risk`` (``(m_stop + 1) x F``).
    """
    if m_stop < 1:
        raise ValueError(f"m_stop must be >= 1, got {m_stop}")
    if not 0 < s <= 1:
        raise ValueError(f"learning rate must lie in (0, 1], got {s}")
    Zc = Z.columns
    n, q = Zc.shape
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise DesignError(f"response has shape {y.shape}, design has {n} rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    if fam.n is not None and fam.n != n:
        raise DesignError(f"family built for n={fam.n}, design has n={n}")
    Wt = np.asarray(weights, dtype=float)
    if Wt.ndim == 1:
        Wt = Wt[:, None]
    if Wt.shape[0] != n or np.any(Wt < 0) or not np.all(np.isfinite(Wt)):
        raise ValueError("weights must be finite, nonnegative and have one row per observation")
    F = Wt.shape[1]
    sw = Wt.sum(axis=0)
    if np.any(sw <= 0):
        raise ValueError("every run needs positive total weight")

    scale = fam.scale
    PZ = np.asarray(fam.transform(Zc))
    P1 = np.asarray(fam.transform(np.ones(n)))
    E = np.repeat(np.asarray(fam.transform(y))[:, None], F, axis=1)

    zbar = (Zc.T @ Wt) / sw
    szz = ((Zc * Zc).T @ Wt) - sw * zbar * zbar
    bad = np.argwhere(szz / sw <= _MIN_VARIANCE)
    if bad.size:
        raise DesignError(f"column {Z.names[bad[0, 0]]!r} is (nearly) constant on the weighted sample")

    sel = np.empty((m_stop, F), dtype=np.int64)
    A = np.empty((m_stop, F))
    B = np.empty((m_stop, F))
    risk = np.empty((m_stop + 1, F))
    risk[0] = (Wt * E * E).sum(axis=0) / scale
    H = None
    if holdout is not None:
        H = np.asarray(holdout, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        hrisk = np.empty((m_stop + 1, F))
        hrisk[0] = (H * E * E).sum(axis=0) / scale
    cols = np.arange(F)

    for m in range(m_stop):
        V = (2.0 / scale) * np.asarray(fam.transform_t(Wt * E))
        if not np.all(np.isfinite(V)):
            raise FloatingPointError(f"non-finite negative gradient at iteration {m + 1}")
        WV = Wt * V
        vbar = WV.sum(axis=0) / sw
        szv = Zc.T @ WV - sw * zbar * vbar
        svv = (WV * V).sum(axis=0) - sw * vbar * vbar
        rss = svv - szv * szv / szz
        j = np.argmin(rss, axis=0)
        b = szv[j, cols] / szz[j, cols]
        # rounding-level correlations are exact zeros, not selections
        noise = np.abs(szv[j, cols]) <= 1e-12 * np.sqrt(szz[j, cols] * (WV * V).sum(axis=0))
        b = np.where(noise, 0.0, b)
        a = vbar - b * zbar[j, cols]
        sel[m], A[m], B[m] = j, a, b
        E -= s * (P1[:, None] * a + PZ[:, j] * b)
        risk[m + 1] = (Wt * E * E).sum(axis=0) / scale
        if H is not None:
            hrisk[m + 1] = (H * E * E).sum(axis=0) / scale

    out = {"selected": sel, "a": A, "b": B, "risk": risk}
    if H is not None:
        out["holdout_risk"] = hrisk
    return out


def boost_fit(Z: DesignBlock, y, fam, m_stop: int, s: float = 0.1, weights=None) -> BoostPath:
    """Component-wise gradient boosting from the zero offset.

    At every iteration the negative gradient is computed at the current
    linear predictor, every column's base-learner is fit to it, the column
    with the smallest (weighted) residual sum of squares wins (lowest index on
    exact ties), and the predictor moves by ``s`` times that fit.
    """
    w = np.ones(Z.n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (Z.n,):
        raise ValueError(f"weights must have length {Z.n}")
    res = boost_runs(Z, y, fam, m_stop, s, w[:, None])
    return BoostPath(
        Z.names, float(s), res["selected"][:, 0], res["a"][:, 0], res["b"][:, 0], res["risk"][:, 0]
    )


def _check_iteration(path, m):
    if not 0 <= m <= path.m_stop:
        raise IndexError(f"iteration {m} outside [0, {path.m_stop}]")


def _partial_sums(path, m):
    s = path.learning_rate
    icpt = s * float(path.intercept_increments[:m].sum())
    coef = s * np.bincount(path.selected[:m], weights=path.slope_increments[:m], minlength=path.q)
    return icpt, coef


def coefficients_at(path: BoostPath, m: int):
    """Intercept and coefficient vector after ``m`` iterations."""
    _check_iteration(path, m)
    return _partial_sums(path, m)


def risk_attribution(path: BoostPath) -> np.ndarray:
    """Risk reduction attributed to each column, summed over the iterations selecting it."""
    drops = path.risk[:-1] - path.risk[1:]
    return np.bincount(path.selected, weights=drops, minlength=path.q)


def deselect(path: BoostPath, tau: float = 0.01) -> DeselectionReport:
    """Keep the columns whose attributed risk reduction is at least ``tau`` of the total."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    R = risk_attribution(path)
    total = float(path.risk[0] - path.risk[-1])
    if total <= 0:
        warnings.warn("no risk reduction along the path; every column is deselected", DeselectionWarning, stacklevel=2)
        retained = ()
    else:
        retained = tuple(int(j) for j in np.flatnonzero(R >= tau * total))
        if not retained:
            warnings.warn("every column fell below the deselection threshold", DeselectionWarning, stacklevel=2)
    R.setflags(write=False)
    return DeselectionReport(R, float(tau), retained, total)
