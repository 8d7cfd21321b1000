"""Laplace-type (quasi-Bayesian) estimation with MCMC."""
from .core import (
    Criterion,
    ParamPoint,
    ParamSpace,
    Prior,
    contains,
    log_quasi_posterior,
    quadratic_criterion,
    temper,
)
from .dataset import Dataset, load_csv, write_csv
from .sampler import Chain, SamplerConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "Criterion",
    "Dataset",
    "ParamPoint",
    "ParamSpace",
    "Prior",
    "SamplerConfig",
    "contains",
    "load_csv",
    "log_quasi_posterior",
    "quadratic_criterion",
    "run_chain",
    "temper",
    "write_csv",
]
