"""Loss families for component-wise boosting.

Both families are expressed through a linear whitening operator ``P`` and a
scale: the loss is ``||P (y - eta)||^2 / scale``. The spatial-error family uses
``P = I - lambda W`` and ``scale = sigma2``, so that the loss equals the squared
Mahalanobis distance ``(y - eta)' Omega^{-1} (y - eta)`` with
``Omega = sigma2 [(I - lambda W)'(I - lambda W)]^{-1}``. The squared-error
family is ``P = I``, ``scale = 1``.

The negative gradient keeps the factor 2, i.e. ``2 Omega^{-1} (y - eta)``.
Compared with conventions that drop constants this doubles the effective
learning rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import SingularMatrixError
from .weights import WeightMatrix

__all__ = [
    "SpatialErrorStructure",
    "SpatialError",
    "SquaredError",
    "loss",
    "negative_gradient",
    "pointwise_risk",
    "log_det_precision",
]


@dataclass(frozen=True)
class SpatialErrorStructure:
    """Autoregressive disturbance parameters with the sparse factor ``I - lambda W``."""

    lam: float
    sigma2: float
    weights: WeightMatrix
    precision_factor: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        lam, sigma2 = float(self.lam), float(self.sigma2)
        if not np.isfinite(lam) or abs(lam) >= 1:
            raise ValueError(f"spatial parameter must satisfy |lambda| < 1, got {lam}")
        if not np.isfinite(sigma2) or sigma2 <= 0:
            raise ValueError(f"sigma2 must be positive, got {sigma2}")
        P = (sp.identity(self.weights.n, format="csr") - lam * self.weights.matrix).tocsr()
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "precision_factor", P)

    @property
    def n(self) -> int:
        return self.weights.n

    def omega_inverse(self) -> np.ndarray:
        """Dense ``Omega^{-1}``; only for small-n checks."""
        P = self.precision_factor.toarray()
        return P.T @ P / self.sigma2


class SquaredError:
    """Plain squared-error loss ``||y - eta||^2`` (first step and SLX models)."""

    kind = "squared_error"
    scale = 1.0
    n = None

    def transform(self, r):
        return r

    def transform_t(self, e):
        return e

    def __repr__(self):
        return "SquaredError()"


class SpatialError:
    """Squared Mahalanobis loss induced by autoregressive disturbances."""

    kind = "spatial_error"

    def __init__(self, structure: SpatialErrorStructure):
        self.structure = structure
        self._P = structure.precision_factor
        self._PT = structure.precision_factor.T.tocsr()

    @property
    def scale(self) -> float:
        return self.structure.sigma2

    @property
    def n(self) -> int:
        return self.structure.n

    def transform(self, r):
        return self._P @ r

    def transform_t(self, e):
        return self._PT @ e

    def __repr__(self):
        s = self.structure
        return f"SpatialError(lam={s.lam:.6g}, sigma2={s.sigma2:.6g}, n={s.n})"


def _residual(y, eta, fam):
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape or y.ndim != 1:
        raise ValueError(f"y and eta must be vectors of equal length, got {y.shape} and {eta.shape}")
    if fam.n is not None and y.shape[0] != fam.n:
        raise ValueError(f"family built for n={fam.n}, got vectors of length {y.shape[0]}")
    r = y - eta
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite values in y or eta")
    return r


def loss(y, eta, fam) -> float:
    """Family loss at the linear predictor ``eta``."""
    e = fam.transform(_residual(y, eta, fam))
    return float(e @ e) / fam.scale


def negative_gradient(y, eta, fam) -> np.ndarray:
    """``-d loss / d eta``: ``(2 / sigma2) P'P (y - eta)``, or ``2 (y - eta)``."""
    e = fam.transform(_residual(y, eta, fam))
    return 2.0 * fam.transform_t(e) / fam.scale


def pointwise_risk(y, eta, fam) -> np.ndarray:
    """Per-location contributions ``e_i^2 / scale`` with ``e = P (y - eta)``; sums to the loss."""
    e = fam.transform(_residual(y, eta, fam))
    return e * e / fam.scale


def log_det_precision(structure: SpatialErrorStructure) -> float:
    """``log |det(I - lambda W)|`` from a sparse LU factorization."""
    if structure.lam == 0.0:
        return 0.0
    try:
        lu = splu(structure.precision_factor.tocsc())
    except RuntimeError as exc:
        raise SingularMatrixError(f"I - lambda W is singular at lambda={structure.lam}: {exc}") from None
    diag = np.abs(lu.U.diagonal())
    if np.any(diag < np.finfo(float).tiny) or not np.all(np.isfinite(diag)):
        raise SingularMatrixError(f"I - lambda W is singular at lambda={structure.lam}")
    return float(np.log(diag).sum())
