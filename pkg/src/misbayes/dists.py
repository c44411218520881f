"""Elementary densities, samplers and SPD helpers.

Parameterizations follow the conventions used throughout the toolkit:

=================  ==========================  =====================================
kind               params                      notes
=================  ==========================  =====================================
normal             mean, var                   variance, not standard deviation
mvnormal           mean (d,), cov (d, d)       cov must be SPD
gamma-shape-rate   shape, rate
inverse-gamma      shape, scale                1/X ~ Gamma(shape, rate=scale)
binomial           n, p
laplace            loc, scale
dirichlet          alpha (k,)
student-t          df, loc, scale
=================  ==========================  =====================================
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import DegeneracyError, ParameterDomainError
from .rng import RngStream, as_stream

KINDS = (
    "normal",
    "mvnormal",
    "gamma-shape-rate",
    "inverse-gamma",
    "binomial",
    "laplace",
    "dirichlet",
    "student-t",
)

_REQUIRED = {
    "normal": ("mean", "var"),
    "mvnormal": ("mean", "cov"),
    "gamma-shape-rate": ("shape", "rate"),
    "inverse-gamma": ("shape", "scale"),
    "binomial": ("n", "p"),
    "laplace": ("loc", "scale"),
    "dirichlet": ("alpha",),
    "student-t": ("df", "loc", "scale"),
}

SPD_REL_FLOOR = 1e-12


def _positive(name, value):
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ParameterDomainError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class DistSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _REQUIRED:
            raise ParameterDomainError(f"unknown distribution kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise ParameterDomainError(f"{self.kind} needs parameters {missing}")
        p = self.params
        if self.kind == "normal":
            _positive("var", p["var"])
        elif self.kind == "mvnormal":
            mean = np.atleast_1d(np.asarray(p["mean"], dtype=float))
            cov = np.atleast_2d(np.asarray(p["cov"], dtype=float))
            if cov.shape != (mean.size, mean.size):
                raise ParameterDomainError("mvnormal cov shape does not match mean")
            if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
                raise ParameterDomainError("mvnormal cov is not symmetric")
            w = np.linalg.eigvalsh(cov)
            if w[0] <= SPD_REL_FLOOR * max(w[-1], 0.0):
                raise ParameterDomainError(
                    f"mvnormal cov is not positive definite (min eigenvalue {w[0]:.3g})"
                )
        elif self.kind in ("gamma-shape-rate",):
            _positive("shape", p["shape"])
            _positive("rate", p["rate"])
        elif self.kind == "inverse-gamma":
            _positive("shape", p["shape"])
            _positive("scale", p["scale"])
        elif self.kind == "binomial":
            n = p["n"]
            if int(n) != n or n < 0:
                raise ParameterDomainError("binomial n must be a nonnegative integer")
            if not 0.0 <= p["p"] <= 1.0:
                raise ParameterDomainError("binomial p must lie in [0, 1]")
        elif self.kind == "laplace":
            _positive("scale", p["scale"])
        elif self.kind == "dirichlet":
            _positive("alpha", p["alpha"])
        elif self.kind == "student-t":
            _positive("df", p["df"])
            _positive("scale", p["scale"])

    # convenience constructors
    @classmethod
    def normal(cls, mean=0.0, var=1.0):
        return cls("normal", {"mean": mean, "var": var})

    @classmethod
    def mvnormal(cls, mean, cov):
        return cls("mvnormal", {"mean": np.asarray(mean, float), "cov": np.asarray(cov, float)})

    @classmethod
    def gamma(cls, shape, rate):
        return cls("gamma-shape-rate", {"shape": shape, "rate": rate})

    @classmethod
    def inverse_gamma(cls, shape, scale):
        return cls("inverse-gamma", {"shape": shape, "scale": scale})

    @classmethod
    def binomial(cls, n, p):
        return cls("binomial", {"n": n, "p": p})

    @classmethod
    def laplace(cls, loc=0.0, scale=1.0):
        return cls("laplace", {"loc": loc, "scale": scale})

    @classmethod
    def dirichlet(cls, alpha):
        return cls("dirichlet", {"alpha": np.asarray(alpha, float)})

    @classmethod
    def student_t(cls, df, loc=0.0, scale=1.0):
        return cls("student-t", {"df": df, "loc": loc, "scale": scale})

    @property
    def dim(self) -> int:
        if self.kind == "mvnormal":
            return np.atleast_1d(self.params["mean"]).size
        if self.kind == "dirichlet":
            return np.atleast_1d(self.params["alpha"]).size
        return 1


def logpdf(spec: DistSpec, x):
    """Natural-log density (or mass) of ``spec`` at ``x``.

    Points outside the support give ``-inf``. Multivariate kinds take the last
    axis of ``x`` as the event dimension.
    """
    p = spec.params
    k = spec.kind
    if k == "normal":
        return stats.norm.logpdf(x, loc=p["mean"], scale=np.sqrt(p["var"]))
    if k == "mvnormal":
        x = np.asarray(x, dtype=float)
        return stats.multivariate_normal.logpdf(x, mean=np.atleast_1d(p["mean"]), cov=np.atleast_2d(p["cov"]))
    if k == "gamma-shape-rate":
        return stats.gamma.logpdf(x, a=p["shape"], scale=1.0 / p["rate"])
    if k == "inverse-gamma":
        return stats.invgamma.logpdf(x, a=p["shape"], scale=p["scale"])
    if k == "binomial":
        x = np.asarray(x, dtype=float)
        out = stats.binom.logpmf(np.round(x), int(p["n"]), p["p"])
        return np.where(x == np.round(x), out, -np.inf)
    if k == "laplace":
        return stats.laplace.logpdf(x, loc=p["loc"], scale=p["scale"])
    if k == "dirichlet":
        x = np.asarray(x, dtype=float)
        alpha = np.asarray(p["alpha"], dtype=float)
        on_simplex = np.all(x >= 0, axis=-1) & np.isclose(x.sum(axis=-1), 1.0, atol=1e-10)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = (
                np.sum(special.xlogy(alpha - 1.0, x), axis=-1)
                + special.gammaln(alpha.sum())
                - special.gammaln(alpha).sum()
            )
        return np.where(on_simplex, lp, -np.inf)
    if k == "student-t":
        return stats.t.logpdf(x, df=p["df"], loc=p["loc"], scale=p["scale"])
    raise ParameterDomainError(k)  # pragma: no cover


def sample(spec: DistSpec, rng, n: int = 1):
    """``n`` i.i.d. draws; identical streams give bit-identical draws."""
    if n < 1:
        raise ParameterDomainError("n must be at least 1")
    gen = as_stream(rng).generator() if not isinstance(rng, np.random.Generator) else rng
    p = spec.params
    k = spec.kind
    if k == "normal":
        return p["mean"] + np.sqrt(p["var"]) * gen.standard_normal(n)
    if k == "mvnormal":
        mean = np.atleast_1d(np.asarray(p["mean"], float))
        L = np.linalg.cholesky(np.atleast_2d(p["cov"]))
        return mean + gen.standard_normal((n, mean.size)) @ L.T
    if k == "gamma-shape-rate":
        return gen.gamma(p["shape"], 1.0 / p["rate"], size=n)
    if k == "inverse-gamma":
        return p["scale"] / gen.gamma(p["shape"], 1.0, size=n)
    if k == "binomial":
        return gen.binomial(int(p["n"]), p["p"], size=n)
    if k == "laplace":
        return gen.laplace(p["loc"], p["scale"], size=n)
    if k == "dirichlet":
        return gen.dirichlet(np.asarray(p["alpha"], float), size=n)
    if k == "student-t":
        return p["loc"] + p["scale"] * gen.standard_t(p["df"], size=n)
    raise ParameterDomainError(k)  # pragma: no cover


def check_spd(M, what="matrix"):
    """Eigendecomposition of a symmetric matrix, raising if not SPD."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise DegeneracyError(f"{what} is not square")
    if not np.allclose(M, M.T, rtol=1e-8, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise DegeneracyError(f"{what} is not symmetric")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if not np.isfinite(w).all() or w[0] <= SPD_REL_FLOOR * max(w[-1], 0.0):
        raise DegeneracyError(
            f"{what} is not positive definite (min eigenvalue {w[0]:.3g}, max {w[-1]:.3g})",
            value=float(w[0]),
            direction=V[:, 0],
        )
    return w, V


def spd_sqrt(M):
    """Symmetric square root ``R`` with ``R @ R == M``."""
    w, V = check_spd(M, "spd_sqrt input")
    return (V * np.sqrt(w)) @ V.T


__all__ = ["DistSpec", "KINDS", "RngStream", "logpdf", "sample", "spd_sqrt", "check_spd"]
