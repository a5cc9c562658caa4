"""Robust general-Bayes inference under the density power divergence.

The tuning parameter gamma is chosen by minimising a Hyvarinen-score
criterion with stochastic gradients inside a sequential Monte Carlo sampler.
"""
from . import data, dpd, hscore, models, optimizer, oracle, smc
from ._backend import backend_name, set_backend, set_threads
from .data import Dataset, load_csv, simulate_contaminated_gaussian
from .errors import DPDError
from .hscore import WeightedSample, h_score, h_score_gradient
from .models import ModelSpec, gaussian, regression
from .optimizer import AdaptiveConfig, run_adaptive
from .smc import FlatPrior, MhConfig

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig",
    "DPDError",
    "Dataset",
    "FlatPrior",
    "MhConfig",
    "ModelSpec",
    "WeightedSample",
    "backend_name",
    "data",
    "dpd",
    "gaussian",
    "h_score",
    "h_score_gradient",
    "hscore",
    "load_csv",
    "models",
    "optimizer",
    "oracle",
    "regression",
    "run_adaptive",
    "set_backend",
    "set_threads",
    "simulate_contaminated_gaussian",
    "smc",
]
