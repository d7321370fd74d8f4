"""Generalized-moments estimation of the disturbance parameters.

Three sample moment conditions of the innovations are written as a system
``G [lam, lam^2, sigma2]' - g = nu`` in the first-step residuals; ``lam`` and
``sigma2`` minimise ``||nu||^2``. A one-shot feasible GLS fit is provided as a
comparator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryWarning, NonIdentificationError, RankDeficiencyError
from .family import SpatialErrorStructure
from .weights import WeightMatrix

__all__ = [
    "MomentSystem",
    "MomentEstimate",
    "build_moment_system",
    "moment_objective",
    "nls_estimate",
    "fit_fgls",
    "golden_section",
]

LAMBDA_BOUND = 0.999
SIGMA2_FLOOR = 1e-10
GRID_STEP = 0.01
LAMBDA_TOL = 1e-8

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class MomentSystem:
    G: np.ndarray
    g: np.ndarray
    n: int


@dataclass(frozen=True)
class MomentEstimate:
    lam: float
    sigma2: float
    objective: float
    at_boundary: bool = False
    sigma2_clamped: bool = False


def build_moment_system(u_tilde, W: WeightMatrix) -> MomentSystem:
    """Sample moment matrices from residuals ``u``, ``Wu`` and ``WWu``."""
    u = np.asarray(u_tilde, dtype=float)
    if u.shape != (W.n,):
        raise ValueError(f"residual vector of length {u.shape} does not match W (n={W.n})")
    if not np.all(np.isfinite(u)):
        raise ValueError("residuals contain non-finite values")
    n = W.n
    ub = W.matrix @ u
    ubb = W.matrix @ ub
    tr = W.matrix.multiply(W.matrix).sum() / n  # tr(W'W) / n
    G = np.array(
        [
            [2 * (u @ ub) / n, -(ub @ ub) / n, 1.0],
            [2 * (ubb @ ub) / n, -(ubb @ ubb) / n, tr],
            [((u @ ubb) + (ub @ ub)) / n, -(ub @ ubb) / n, 0.0],
        ]
    )
    g = np.array([(u @ u) / n, (ub @ ub) / n, (u @ ub) / n])
    return MomentSystem(G, g, n)


def moment_objective(sys: MomentSystem, lam: float, sigma2: float) -> float:
    nu = sys.G @ np.array([lam, lam * lam, sigma2]) - sys.g
    return float(nu @ nu)


def _profile(sys: MomentSystem, lam):
    """Best ``sigma2`` for each ``lam`` (closed form, floored) and the objective there."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    G, g = sys.G, sys.g
    target = g[:, None] - G[:, :1] * lam[None, :] - G[:, 1:2] * (lam * lam)[None, :]
    c = G[:, 2]
    sig = (c @ target) / (c @ c)
    clamped = sig < SIGMA2_FLOOR
    sig = np.where(clamped, SIGMA2_FLOOR, sig)
    resid = target - c[:, None] * sig[None, :]
    return sig, (resid * resid).sum(axis=0), clamped


def golden_section(f, a: float, b: float, tol: float = LAMBDA_TOL, max_iter: int = 200) -> float:
    """Minimise a unimodal ``f`` on ``[a, b]`` until the bracket is shorter than ``tol``."""
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def nls_estimate(sys: MomentSystem, bound: float = LAMBDA_BOUND) -> MomentEstimate:
    """Nonlinear least-squares solution of the moment system.

    ``sigma2`` is profiled out in closed form; ``lam`` is located on a 0.01
    grid over ``[-bound, bound]`` and refined by golden-section search on the
    neighbouring grid cells.
    """
    G = sys.G
    if not np.all(np.isfinite(G)) or not np.all(np.isfinite(sys.g)):
        raise NonIdentificationError("moment system has non-finite entries")
    scale = np.abs(G[:, 2]).max()
    if np.abs(G[:, :2]).max() <= 1e-14 * max(scale, 1.0):
        raise NonIdentificationError("moment system carries no information on lambda (zero residuals?)")

    grid = np.arange(-bound, bound + GRID_STEP / 2, GRID_STEP)
    grid[-1] = min(grid[-1], bound)
    _, obj, _ = _profile(sys, grid)
    i = int(np.argmin(obj))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    lam = golden_section(lambda x: float(_profile(sys, x)[1][0]), lo, hi)
    # keep the grid point if refinement did not improve on it
    if _profile(sys, lam)[1][0] > obj[i]:
        lam = float(grid[i])
    sig, val, clamped = _profile(sys, lam)
    at_boundary = abs(abs(lam) - bound) < 1e-6
    if at_boundary:
        warnings.warn(f"moment estimate on the boundary (lambda={lam:.6f})", BoundaryWarning, stacklevel=2)
    if clamped[0]:
        warnings.warn("sigma2 estimate clamped at its floor", BoundaryWarning, stacklevel=2)
    return MomentEstimate(float(lam), float(sig[0]), float(val[0]), bool(at_boundary), bool(clamped[0]))


def fit_fgls(Z, y, structure: SpatialErrorStructure):
    """Generalized least squares with weight matrix ``P'P``, ``P = I - lam W``.

    An all-ones column is prepended to the design.

    Returns
    -------
    intercept : float
    coefficients : ndarray of shape (q,)
    """
    Zc = np.asarray(getattr(Z, "columns", Z), dtype=float)
    n, q = Zc.shape
    y = np.asarray(y, dtype=float)
    if q + 1 > n:
        raise RankDeficiencyError(f"GLS needs q + 1 <= n, got q={q}, n={n}")
    X = np.column_stack([np.ones(n), Zc])
    P = structure.precision_factor
    PX = np.asarray(P @ X)
    Py = np.asarray(P @ y)
    coef, _, rank, sv = np.linalg.lstsq(PX, Py, rcond=None)
    if rank < q + 1:
        raise RankDeficiencyError(f"transformed design has rank {rank} < {q + 1}")
    return float(coef[0]), coef[1:]
