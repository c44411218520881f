"""Two-module systems: exact, cut and semi-modular posteriors."""
from .core import (
    CutDiagnostic,
    SmpConfig,
    TwoModuleModel,
    cut_diagnostic,
    cut_posterior,
    exact_posterior,
    laplace_approximation,
    re_cut_exact_sampler,
    smp_posterior,
)
from .experiment import ExperimentResult, ExperimentSpec, repeated_sampling_experiment
from .random_effects import RandomEffectsModel, sample_log_psi2_grid, simulate, sufficient_stats

__all__ = [
    "CutDiagnostic",
    "SmpConfig",
    "TwoModuleModel",
    "RandomEffectsModel",
    "ExperimentSpec",
    "ExperimentResult",
    "cut_diagnostic",
    "cut_posterior",
    "exact_posterior",
    "laplace_approximation",
    "re_cut_exact_sampler",
    "smp_posterior",
    "repeated_sampling_experiment",
    "sample_log_psi2_grid",
    "simulate",
    "sufficient_stats",
]
