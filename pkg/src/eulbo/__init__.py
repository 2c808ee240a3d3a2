"""Approximation-aware Bayesian optimization with sparse variational GPs.

Jointly optimizes the SVGP posterior approximation and the next query point
through a single expected-utility lower bound, instead of the conventional
fit-then-acquire two-step scheme.
"""

from .engine import EulboConfig, RefinementMask, eulbo, maximize_eulbo, warm_start
from .gp import Dataset, Hyperparams, PosteriorGaussian
from .svgp import SvgpModel, VariationalState, elbo, svgp_predict
from .utility import BaseSamples, UtilityConfig

__all__ = [
    "BaseSamples",
    "Dataset",
    "EulboConfig",
    "Hyperparams",
    "PosteriorGaussian",
    "RefinementMask",
    "SvgpModel",
    "UtilityConfig",
    "VariationalState",
    "elbo",
    "eulbo",
    "maximize_eulbo",
    "svgp_predict",
    "warm_start",
]

__version__ = "0.1.0"
