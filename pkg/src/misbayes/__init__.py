"""Bayesian inference under misspecified models.

Restricted-likelihood posteriors (ABC, synthetic likelihood and its robust
variants, Q-posterior), modular cut and semi-modular posteriors, and KL
projection of GLM posteriors onto submodels.
"""
from .dists import DistSpec, check_spd, logpdf, sample, spd_sqrt
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    DataError,
    DegeneracyError,
    DesignError,
    InitializationError,
    MisbayesError,
    ParameterDomainError,
    SeparationError,
)
from .mcmc import Chain, MhConfig, kl_gauss_moment, rw_metropolis, summarize
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "DistSpec",
    "RngStream",
    "Chain",
    "MhConfig",
    "check_spd",
    "logpdf",
    "sample",
    "spd_sqrt",
    "rw_metropolis",
    "summarize",
    "kl_gauss_moment",
    "MisbayesError",
    "ConfigError",
    "ContractError",
    "ConvergenceError",
    "DataError",
    "DegeneracyError",
    "DesignError",
    "InitializationError",
    "ParameterDomainError",
    "SeparationError",
]
