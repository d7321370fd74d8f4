"""Feasible model-based gradient boosting for spatial regression models
with autoregressive disturbances (SDEM, SEM, SLX)."""

__version__ = "0.1.0"

from .boost import BoostPath, DesignBlock, boost_fit, coefficients_at, deselect, risk_attribution
from .family import SpatialError, SpatialErrorStructure, SquaredError, loss, negative_gradient, pointwise_risk
from .moments import build_moment_system, fit_fgls, nls_estimate
from .pipeline import FitConfig, FitResult, config_for_variant, fit_sdem, fit_slx, predict
from .weights import WeightMatrix, build_circular, build_knn, row_normalize, spatial_lag

__all__ = [
    "BoostPath",
    "DesignBlock",
    "FitConfig",
    "FitResult",
    "SpatialError",
    "SpatialErrorStructure",
    "SquaredError",
    "WeightMatrix",
    "boost_fit",
    "build_circular",
    "build_knn",
    "build_moment_system",
    "coefficients_at",
    "config_for_variant",
    "deselect",
    "fit_fgls",
    "fit_sdem",
    "fit_slx",
    "loss",
    "negative_gradient",
    "nls_estimate",
    "pointwise_risk",
    "predict",
    "risk_attribution",
    "row_normalize",
    "spatial_lag",
]
