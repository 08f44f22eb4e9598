"""Conditionally structured Gaussian variational inference.

A Gaussian marginal over global parameters, a conditionally Gaussian layer
over local latent variables whose mean and precision factor respond linearly
to the globals, block-banded sparsity matching the model's conditional
independence, and optional importance weighted refinement.
"""

from .bounds import (
    dreg_gradient,
    elbo_estimate,
    iwlb_estimate,
    path_gradient,
    renyi_bound,
    total_gradient,
)
from .estimator import CSGVAEstimator
from .exceptions import (
    ConfigError,
    DataError,
    EvaluationError,
    FitDivergedError,
    NonFiniteParameterError,
    SingularFactorError,
)
from .family import VariationalParams, from_gva, reparam
from .linalg import BandPattern, TriFactor
from .models import GlmmData, GlmmModel, SvmData, SvmModel, mean_correct
from .optimizer import FitConfig, FitReport, estimate_bound, fit
from .posterior import PosteriorSummary, sample_posterior

__version__ = "0.1.0"

__all__ = [
    "BandPattern",
    "TriFactor",
    "VariationalParams",
    "from_gva",
    "reparam",
    "GlmmData",
    "GlmmModel",
    "SvmData",
    "SvmModel",
    "mean_correct",
    "elbo_estimate",
    "path_gradient",
    "total_gradient",
    "iwlb_estimate",
    "renyi_bound",
    "dreg_gradient",
    "FitConfig",
    "FitReport",
    "fit",
    "estimate_bound",
    "sample_posterior",
    "PosteriorSummary",
    "CSGVAEstimator",
    "EvaluationError",
    "SingularFactorError",
    "NonFiniteParameterError",
    "ConfigError",
    "DataError",
    "FitDivergedError",
]
