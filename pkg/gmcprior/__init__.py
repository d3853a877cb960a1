"""
gmcprior - Bayesian spline regression and survival models that borrow from a supplemental source with GMC priors
"""

__version__ = "0.1.0"

from .config import SamplerConfig, Settings, settings
from .state import ChainSet, CurveSummary, RegressionDataset, SurvivalDataset

__all__ = [
    "Settings",
    "settings",
    "SamplerConfig",
    "ChainSet",
    "CurveSummary",
    "RegressionDataset",
    "SurvivalDataset",
]
