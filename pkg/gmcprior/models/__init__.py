"""
Posterior models: spline regression (conventional, GMC, CTp) and piecewise-exponential survival
"""

from .regression import (
    GmcRegressionSpec,
    fit_ctp_gmc,
    fit_regression_conventional,
    fit_regression_gmc,
    predict_curve,
    predict_derivative,
)

from .survival import (
    fit_pwe_conventional,
    fit_pwe_gmc,
    hazard_ratio_summary,
    median_survival,
    pwe_loglik,
    rescale_time,
    survival_curve,
)

__all__ = [
    "GmcRegressionSpec",
    "fit_ctp_gmc",
    "fit_regression_conventional",
    "fit_regression_gmc",
    "predict_curve",
    "predict_derivative",
    "fit_pwe_conventional",
    "fit_pwe_gmc",
    "hazard_ratio_summary",
    "median_survival",
    "pwe_loglik",
    "rescale_time",
    "survival_curve",
]
