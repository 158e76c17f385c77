"""Bayesian fractional polynomial dose-response modelling with model averaging."""

from .bma import BfpResult, CurveSummary, DoseGrid, OptimumPosterior, fit_bfp
from .data import DoseResponseData
from .fp_basis import ModelIndex, build_design, transform
from .model_search import PosteriorEnsemble, enumerate_models, hpm, mjmcmc

__all__ = [
    "BfpResult",
    "CurveSummary",
    "DoseGrid",
    "DoseResponseData",
    "ModelIndex",
    "OptimumPosterior",
    "PosteriorEnsemble",
    "build_design",
    "enumerate_models",
    "fit_bfp",
    "hpm",
    "mjmcmc",
    "transform",
]
