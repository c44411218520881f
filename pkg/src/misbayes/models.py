"""Built-in generative models and summary maps, selectable by name."""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import special

from . import glm
from .errors import ConfigError, ContractError, ConvergenceError
from .modular.random_effects import simulate as simulate_random_effects, sufficient_stats
from .restricted import GenerativeModel, censor_summary

MODELS = ("gaussian-toy", "glm-binomial", "random-effects")
SUMMARIES = ("identity", "censor", "robust-mest", "moments")


def gaussian_toy(n: int = 100, channels: int = 3, summary: str = "moments", t1: float = -2.0, t2: float = 2.0) -> GenerativeModel:
    """``n x channels`` i.i.d. ``N(theta, 1)`` observations with scalar location ``theta``.

    Summaries: ``moments`` (column means, d = channels), ``identity`` (all
    values) or ``censor`` (all values clamped to ``[t1, t2]``).
    """
    if n < 1 or channels < 1:
        raise ContractError("gaussian-toy needs n >= 1 and channels >= 1")

    def sim(theta, gen):
        return theta[0] + gen.standard_normal((n, channels))

    if summary == "moments":
        def batch(theta, m, gen):
            return theta[0] + gen.standard_normal((m, n, channels)).mean(axis=1)

        return GenerativeModel(sim, lambda x: x.mean(axis=0), 1, channels, batch, name="gaussian-toy")
    if summary == "identity":
        def batch(theta, m, gen):
            return theta[0] + gen.standard_normal((m, n * channels))

        return GenerativeModel(sim, lambda x: x.reshape(-1), 1, n * channels, batch, name="gaussian-toy")
    if summary == "censor":
        def batch(theta, m, gen):
            return censor_summary(theta[0] + gen.standard_normal((m, n * channels)), t1, t2)

        return GenerativeModel(sim, lambda x: censor_summary(x.reshape(-1), t1, t2), 1, n * channels, batch,
                               name="gaussian-toy")
    raise ConfigError(f"summary {summary!r} is not available for gaussian-toy")


def glm_binomial(data: glm.GlmData, summary: str = "robust-mest", c: float = 1.2) -> GenerativeModel:
    """Binomial-logit responses on a fixed design; ``theta`` is the coefficient vector.

    Summaries: ``robust-mest`` (Huber quasi-likelihood estimate, NaN when the
    robust fit fails), ``moments`` (``Z' y``, sufficient for the model) and
    ``identity`` (the responses).
    """
    family = glm.GlmFamily("binomial-logit")
    trials = data.trials if data.trials is not None else np.ones(data.n)
    p = data.p

    def sim(theta, gen):
        eta = np.clip(data.Z @ theta, -glm.ETA_CLIP, glm.ETA_CLIP)
        return gen.binomial(trials.astype(np.int64), special.expit(eta)).astype(float)

    if summary == "robust-mest":
        def summ(y):
            try:
                return glm.robust_mest(family, data.with_response(y), c=c).coef
            except (ConvergenceError, ArithmeticError, ValueError):
                return np.full(p, np.nan)

        return GenerativeModel(sim, summ, p, p, name="glm-binomial")
    if summary == "moments":
        return GenerativeModel(sim, lambda y: data.Z.T @ y, p, p, name="glm-binomial")
    if summary == "identity":
        return GenerativeModel(sim, lambda y: y, p, data.n, name="glm-binomial")
    raise ConfigError(f"summary {summary!r} is not available for glm-binomial")


def random_effects(N: int = 10, J: int = 10, summary: str = "moments") -> GenerativeModel:
    """Random-effects data with ``theta = (log psi^2, log phi^2)`` and a common ``phi^2``.

    ``moments``: ``(log mean(zbar^2), log mean(s2 / (J - 1)))``, whose
    expectations are driven by ``psi^2 + phi^2/J`` and ``phi^2``.
    """
    if J < 2:
        raise ContractError("random-effects needs J >= 2")

    def sim(theta, gen):
        psi2, phi2 = np.exp(theta[0]), np.exp(theta[1])
        Z, _ = simulate_random_effects(N, J, phi2, psi2, gen)
        return Z

    if summary == "moments":
        def summ(Z):
            zbar, s2 = sufficient_stats(Z)
            return np.array([np.log(np.mean(zbar**2)), np.log(np.mean(s2) / (J - 1))])

        return GenerativeModel(sim, summ, 2, 2, name="random-effects")
    if summary == "identity":
        return GenerativeModel(sim, lambda Z: Z.reshape(-1), 2, N * J, name="random-effects")
    raise ConfigError(f"summary {summary!r} is not available for random-effects")


def build_model(name: str, summary: str, data: Optional[glm.GlmData] = None, **params) -> GenerativeModel:
    if name == "gaussian-toy":
        return gaussian_toy(summary=summary, **params)
    if name == "glm-binomial":
        if data is None:
            raise ConfigError("glm-binomial needs a data set for its design")
        return glm_binomial(data, summary=summary, **params)
    if name == "random-effects":
        return random_effects(summary=summary, **params)
    raise ConfigError(f"unknown model {name!r}; choose from {MODELS}")
