from .base import ModelDims
from .glmm import GlmmData, GlmmModel, build_ci
from .svm import SvmData, SvmModel, mean_correct, natural_params, unconstrained_params

__all__ = [
    "ModelDims",
    "GlmmData",
    "GlmmModel",
    "build_ci",
    "SvmData",
    "SvmModel",
    "mean_correct",
    "natural_params",
    "unconstrained_params",
]
