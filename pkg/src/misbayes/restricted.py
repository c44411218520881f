"""Restricted-likelihood posteriors.

Summary-statistic likelihood estimators (ABC kernel average, Gaussian
synthetic likelihood and its robust expansions with an auxiliary vector
``Gamma``), the pseudo-marginal BRSL sampler, and the Q-posterior kernel built
from the score vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import glm
from .dists import DistSpec, check_spd, logpdf, spd_sqrt
from .errors import ContractError, DegeneracyError
from .mcmc import Chain, MhConfig, rw_metropolis
from .rng import RngStream, as_stream

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def censor_summary(y, t1: float, t2: float) -> np.ndarray:
    """Clamp every observation into ``[t1, t2]``."""
    if not t1 < t2:
        raise ContractError(f"censoring needs t1 < t2, got {t1} >= {t2}")
    return np.clip(np.asarray(y, dtype=float), t1, t2)


@dataclass(frozen=True)
class GenerativeModel:
    """Simulator plus summary map.

    ``simulate(theta, gen)`` draws one dataset from a numpy Generator;
    ``summary(dataset)`` maps it to a vector of length ``summary_dim``.
    ``batch`` optionally returns an ``(m, d)`` array of summaries in one call
    and must consume ``gen`` deterministically.
    """

    simulate: Callable
    summary: Callable
    theta_dim: int
    summary_dim: int
    batch: Optional[Callable] = None
    name: str = "custom"

    def simulate_summaries(self, theta, m: int, gen: np.random.Generator) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.batch is not None:
            S = np.asarray(self.batch(theta, m, gen), dtype=float)
        else:
            S = np.array([np.atleast_1d(self.summary(self.simulate(theta, gen))) for _ in range(m)], dtype=float)
        if S.shape != (m, self.summary_dim):
            raise ContractError(f"summaries have shape {S.shape}, expected {(m, self.summary_dim)}")
        return S


@dataclass(frozen=True)
class AbcConfig:
    m: int
    eps: float
    kernel: str = "gaussian"
    distance: str = "euclidean"
    pilot_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.m < 1:
            raise ContractError("ABC needs m >= 1")
        if not self.eps > 0:
            raise ContractError("ABC tolerance must be positive")
        if self.kernel not in ("gaussian", "uniform"):
            raise ContractError(f"unknown ABC kernel {self.kernel!r}")
        if self.distance not in ("euclidean", "mahalanobis-pilot"):
            raise ContractError(f"unknown ABC distance {self.distance!r}")
        if self.distance == "mahalanobis-pilot" and self.pilot_cov is None:
            raise ContractError("mahalanobis-pilot distance needs a pilot covariance")


BSL_VARIANTS = ("standard", "mean-adjust", "variance-inflate")


@dataclass(frozen=True)
class BslConfig:
    m: int = 20
    variant: str = "standard"
    gamma_prior_scale: float = 0.5

    def __post_init__(self):
        if self.variant not in BSL_VARIANTS:
            raise ContractError(f"unknown BSL variant {self.variant!r}")
        if not self.gamma_prior_scale > 0:
            raise ContractError("gamma_prior_scale must be positive")

    def check(self, d: int):
        if self.m < d + 2:
            raise ContractError(f"BSL needs m >= d + 2 = {d + 2}, got m = {self.m}")


def _generator(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator()


def pilot_covariance(model: GenerativeModel, prior_sampler: Callable, n_pilot: int, rng) -> np.ndarray:
    """Covariance of prior-predictive summaries, for Mahalanobis ABC distances."""
    if n_pilot < model.summary_dim + 2:
        raise ContractError("pilot needs at least d + 2 simulations")
    gen = _generator(rng)
    S = np.array([model.simulate_summaries(prior_sampler(gen), 1, gen)[0] for _ in range(n_pilot)])
    return np.atleast_2d(np.cov(S, rowvar=False))


def abc_distances(s_obs, summaries, cfg: AbcConfig) -> np.ndarray:
    diff = np.atleast_2d(summaries) - np.asarray(s_obs, float)
    if cfg.distance == "euclidean":
        return np.sqrt(np.sum(diff**2, axis=1))
    L = np.linalg.cholesky(np.atleast_2d(cfg.pilot_cov))
    u = np.linalg.solve(L, diff.T)
    return np.sqrt(np.sum(u**2, axis=0))


def abc_kernel_loglik(rho, cfg: AbcConfig) -> float:
    """Log of the kernel average ``(1/m) sum K_eps(rho_i)`` (Gaussian kernel up to a constant)."""
    rho = np.asarray(rho, float)
    m = rho.size
    if cfg.kernel == "gaussian":
        return float(special.logsumexp(-0.5 * (rho / cfg.eps) ** 2) - np.log(m))
    hits = int(np.count_nonzero(rho <= cfg.eps))
    if hits == 0:
        log.debug("uniform ABC kernel accepted none of %d simulations", m)
        return float("-inf")
    return float(np.log(hits / m))


def abc_loglik(theta, s_obs, model: GenerativeModel, cfg: AbcConfig, rng) -> float:
    """ABC likelihood estimate from ``cfg.m`` fresh simulations at ``theta``."""
    s_obs = np.atleast_1d(np.asarray(s_obs, float))
    if s_obs.size != model.summary_dim:
        raise ContractError("observed summary has the wrong dimension")
    S = model.simulate_summaries(theta, cfg.m, _generator(rng))
    return abc_kernel_loglik(abc_distances(s_obs, S, cfg), cfg)


def _sample_moments(summaries):
    S = np.atleast_2d(np.asarray(summaries, dtype=float))
    if S.shape[0] == 1 and S.shape[1] > 1 and np.ndim(summaries) == 1:
        S = S.T
    mu = S.mean(axis=0)
    D = S - mu
    # 1/m normalization, as in the synthetic-likelihood definition used here
    Sigma = D.T @ D / S.shape[0]
    return mu, Sigma


def _gauss_logpdf(x, mu, Sigma) -> float:
    try:
        w, V = check_spd(Sigma, "synthetic-likelihood covariance")
    except DegeneracyError as exc:
        raise DegeneracyError(
            f"{exc}; collapsed direction {np.round(exc.direction, 6).tolist() if exc.direction is not None else None}",
            value=exc.value,
            direction=exc.direction,
        ) from None
    diff = V.T @ (np.asarray(x, float) - mu)
    return float(-0.5 * (mu.size * LOG_2PI + np.log(w).sum() + np.sum(diff**2 / w)))


def synthetic_loglik(s_obs, summaries) -> float:
    """Gaussian log-density of ``s_obs`` under the sample moments of ``summaries`` (rows)."""
    mu, Sigma = _sample_moments(summaries)
    return _gauss_logpdf(np.atleast_1d(s_obs), mu, Sigma)


def adjusted_moments(summaries, gamma, variant: str):
    """Sample moments after the robust mean adjustment or variance inflation."""
    mu, Sigma = _sample_moments(summaries)
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if gamma.size != mu.size:
        raise ContractError("Gamma must have one entry per summary statistic")
    if variant == "mean-adjust":
        return mu + np.sqrt(np.diag(Sigma)) * gamma, Sigma
    if variant == "variance-inflate":
        if np.any(gamma < 0):
            raise ContractError("variance inflation needs gamma_i >= 0")
        R = spd_sqrt(Sigma)
        return mu, Sigma + R @ np.diag(gamma) @ R
    if variant == "standard":
        return mu, Sigma
    raise ContractError(f"unknown variant {variant!r}")


def robust_synthetic_loglik(s_obs, summaries, gamma, variant: str) -> float:
    mu, Sigma = adjusted_moments(summaries, gamma, variant)
    return _gauss_logpdf(np.atleast_1d(s_obs), mu, Sigma)


def bsl_loglik(theta, s_obs, model: GenerativeModel, cfg: BslConfig, rng) -> float:
    """Synthetic log-likelihood from ``cfg.m`` fresh simulations at ``theta``."""
    cfg.check(model.summary_dim)
    S = model.simulate_summaries(theta, cfg.m, _generator(rng))
    if not np.isfinite(S).all():
        raise DegeneracyError("simulated summaries contain non-finite values")
    return synthetic_loglik(s_obs, S)


def rbsl_loglik(theta, gamma, s_obs, model: GenerativeModel, cfg: BslConfig, rng) -> float:
    """Robust synthetic log-likelihood; ``gamma = 0`` reproduces :func:`bsl_loglik`."""
    cfg.check(model.summary_dim)
    S = model.simulate_summaries(theta, cfg.m, _generator(rng))
    if not np.isfinite(S).all():
        raise DegeneracyError("simulated summaries contain non-finite values")
    variant = cfg.variant if cfg.variant != "standard" else "mean-adjust"
    return robust_synthetic_loglik(s_obs, S, gamma, variant)


def gamma_log_prior(gamma, cfg: BslConfig) -> float:
    """Laplace(0, scale) per component for mean adjustment, Exponential(1/scale) for inflation."""
    g = np.atleast_1d(gamma)
    b = cfg.gamma_prior_scale
    if cfg.variant == "variance-inflate":
        if np.any(g < 0):
            return float("-inf")
        return float(np.sum(-np.log(b) - g / b))
    return float(np.sum(-np.log(2 * b) - np.abs(g) / b))


def _as_log_prior(prior) -> Callable:
    if prior is None:
        return lambda th: 0.0
    if isinstance(prior, DistSpec):
        return lambda th: float(np.sum(logpdf(prior, th)))
    return prior


class _PseudoMarginalTarget:
    """BRSL log target; each call simulates on its own child stream."""

    def __init__(self, model, s_obs, log_prior, cfg, stream: RngStream):
        self.model = model
        self.s_obs = s_obs
        self.log_prior = log_prior
        self.cfg = cfg
        self.stream = stream
        self.calls = 0
        self.degenerate = 0
        self.p = model.theta_dim
        self.d = model.summary_dim

    def split(self, x):
        theta = x[: self.p]
        if self.cfg.variant == "standard":
            return theta, np.zeros(self.d), 0.0
        if self.cfg.variant == "variance-inflate":
            # sampled on log(gamma); Jacobian sum(log gamma)
            lg = x[self.p :]
            return theta, np.exp(lg), float(np.sum(lg))
        return theta, x[self.p :], 0.0

    def __call__(self, x):
        theta, gamma, log_jac = self.split(x)
        lp = self.log_prior(theta)
        if not np.isfinite(lp):
            return float("-inf")
        gen = self.stream.child(self.calls).generator()
        self.calls += 1
        S = self.model.simulate_summaries(theta, self.cfg.m, gen)
        try:
            if not np.isfinite(S).all():
                raise DegeneracyError("non-finite simulated summary")
            if self.cfg.variant == "standard":
                ll = synthetic_loglik(self.s_obs, S)
            else:
                ll = robust_synthetic_loglik(self.s_obs, S, gamma, self.cfg.variant)
        except DegeneracyError:
            self.degenerate += 1
            if self.calls == 1:
                raise DegeneracyError("synthetic likelihood is degenerate at the initial point") from None
            if self.calls >= 200 and self.degenerate > 0.01 * self.calls:
                raise DegeneracyError(
                    f"{self.degenerate} of {self.calls} synthetic-likelihood evaluations were degenerate"
                )
            return float("-inf")
        prior_g = gamma_log_prior(gamma, self.cfg) if self.cfg.variant != "standard" else 0.0
        return ll + lp + prior_g + log_jac


def brsl_posterior(
    model: GenerativeModel,
    s_obs,
    prior_theta,
    cfg: BslConfig,
    mh: MhConfig,
    rng,
    init_theta,
    init_gamma=None,
) -> Chain:
    """Pseudo-marginal random-walk MH over ``(theta, Gamma)``.

    For ``variance-inflate`` the chain moves on ``log(gamma)``, so
    ``mh.proposal_cov`` refers to that scale; reported draws are on the
    natural scale. The ``standard`` variant samples ``theta`` alone (Gamma
    frozen at zero). ``mh.proposal_cov`` may cover only the ``theta`` block, in
    which case the Gamma block gets a unit-variance diagonal (mean adjustment
    uses ``gamma_prior_scale**2``).
    """
    s_obs = np.atleast_1d(np.asarray(s_obs, float))
    d, p = model.summary_dim, model.theta_dim
    if s_obs.size != d:
        raise ContractError("observed summary has the wrong dimension")
    cfg.check(d)
    stream = as_stream(rng)
    target = _PseudoMarginalTarget(model, s_obs, _as_log_prior(prior_theta), cfg, stream.child(1))
    theta0 = np.atleast_1d(np.asarray(init_theta, float))
    if cfg.variant == "standard":
        x0 = theta0
        names = tuple(f"theta_{j + 1}" for j in range(p))
        dim = p
    else:
        if init_gamma is None:
            g0 = np.full(d, cfg.gamma_prior_scale * np.log(2.0)) if cfg.variant == "variance-inflate" else np.zeros(d)
        else:
            g0 = np.atleast_1d(np.asarray(init_gamma, float))
        x0 = np.concatenate([theta0, np.log(g0) if cfg.variant == "variance-inflate" else g0])
        names = tuple(f"theta_{j + 1}" for j in range(p)) + tuple(f"gamma_{i + 1}" for i in range(d))
        dim = p + d
    cov = mh.proposal_cov
    if cov is None:
        raise ContractError("brsl_posterior needs a proposal covariance for theta")
    if cov.shape == (p, p) and dim > p:
        g_var = 1.0 if cfg.variant == "variance-inflate" else cfg.gamma_prior_scale**2
        full = np.zeros((dim, dim))
        full[:p, :p] = cov
        full[p:, p:] = np.eye(d) * g_var
        cov = full
    chain = rw_metropolis(target, x0, mh.with_cov(cov), stream.child(0), names=names)
    draws = np.array(chain.draws)
    if cfg.variant == "variance-inflate":
        draws[:, p:] = np.exp(draws[:, p:])
    config = dict(chain.config)
    config.update(
        {"bsl_m": cfg.m, "variant": cfg.variant, "gamma_prior_scale": cfg.gamma_prior_scale,
         "likelihood_evaluations": target.calls, "degenerate_evaluations": target.degenerate}
    )
    return Chain(draws, chain.log_target, chain.acceptance_rate, names, config, chain.seed)


# ---------------------------------------------------------------------------
# Q-posterior


def q_posterior_parts(theta, data: glm.GlmData, family: glm.GlmFamily):
    """Return ``(m, W)``: negative total score and centered score covariance (1/n)."""
    S = glm.score_terms(family, data, theta)
    n = S.shape[0]
    m = -S.sum(axis=0)
    C = S - S.mean(axis=0)
    W = C.T @ C / n
    return m, W


def q_posterior_logpdf(theta, data: glm.GlmData, family: glm.GlmFamily, prior_theta=None) -> float:
    """Unnormalized Q-posterior log density.

    ``-1/2 log|W| - 1/2 (m/sqrt(n))' W^{-1} (m/sqrt(n)) + log prior``, with
    ``m`` the gradient of the negative log-likelihood and ``W`` the centered
    sample covariance of the per-observation scores.
    """
    theta = np.asarray(theta, float)
    lp = _as_log_prior(prior_theta)(theta)
    if not np.isfinite(lp):
        return float("-inf")
    m, W = q_posterior_parts(theta, data, family)
    n = data.n
    w, V = check_spd(W, "score covariance W(theta)")
    u = V.T @ (m / np.sqrt(n))
    return float(-0.5 * np.log(w).sum() - 0.5 * np.sum(u**2 / w) + lp)


__all__ = [
    "GenerativeModel",
    "AbcConfig",
    "BslConfig",
    "BSL_VARIANTS",
    "censor_summary",
    "abc_loglik",
    "abc_distances",
    "abc_kernel_loglik",
    "pilot_covariance",
    "synthetic_loglik",
    "bsl_loglik",
    "adjusted_moments",
    "robust_synthetic_loglik",
    "rbsl_loglik",
    "gamma_log_prior",
    "brsl_posterior",
    "q_posterior_parts",
    "q_posterior_logpdf",
]
