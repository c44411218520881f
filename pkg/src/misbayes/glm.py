"""Generalised linear models with canonical links.

Families: ``binomial-logit`` (``y`` counts out of ``trials``), ``poisson-log``
and ``gaussian-identity``. All three use canonical links, so the score is
``Z.T @ w * (y - mu) / dispersion`` for prior weights ``w`` and the expected
and observed information coincide.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .errors import ContractError, ConvergenceError, DataError, DesignError, SeparationError

FAMILIES = ("binomial-logit", "gaussian-identity", "poisson-log")
ETA_CLIP = 30.0
SEPARATION_NORM = 1e3


@dataclass(frozen=True)
class GlmFamily:
    kind: str
    dispersion: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ContractError(f"unknown GLM family {self.kind!r}; choose from {FAMILIES}")
        if not self.dispersion > 0:
            raise ContractError("dispersion must be positive")
        if self.kind != "gaussian-identity" and self.dispersion != 1.0:
            raise ContractError(f"{self.kind} has dispersion fixed at 1")


@dataclass(frozen=True)
class GlmData:
    y: np.ndarray
    Z: np.ndarray
    trials: Optional[np.ndarray] = None
    row_names: Optional[tuple] = None
    column_names: tuple = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.shape[0] != y.size:
            raise DataError(f"design has {Z.shape[0]} rows but y has {y.size}")
        trials = None
        if self.trials is not None:
            trials = np.asarray(self.trials, dtype=float).reshape(-1)
            if trials.size != y.size:
                raise DataError("trials length differs from y")
            bad = np.flatnonzero((y < 0) | (y > trials))
            if bad.size:
                raise DataError(f"row {bad[0]}: need 0 <= y <= trials", row=int(bad[0]))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "trials", trials)
        if not self.column_names:
            object.__setattr__(self, "column_names", tuple(f"z{j}" for j in range(Z.shape[1])))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    def with_response(self, y) -> "GlmData":
        return GlmData(np.asarray(y, float), self.Z, self.trials, self.row_names, self.column_names)

    def subset_columns(self, idx: Sequence[int]) -> "GlmData":
        idx = list(idx)
        return GlmData(self.y, self.Z[:, idx], self.trials, self.row_names, tuple(self.column_names[j] for j in idx))


@dataclass(frozen=True)
class GlmFit:
    coef: np.ndarray
    cov: np.ndarray
    converged: bool
    iterations: int
    dispersion: float = 1.0
    score_norm: float = float("nan")

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def _trials(family: GlmFamily, data: GlmData) -> np.ndarray:
    if family.kind == "binomial-logit":
        return data.trials if data.trials is not None else np.ones(data.n)
    return np.ones(data.n)


def mean_function(family: GlmFamily, eta, trials=None):
    """Inverse link; returns ``(mu, var_fn)`` where var_fn is the GLM variance function."""
    eta = np.clip(eta, -ETA_CLIP, ETA_CLIP)
    if family.kind == "binomial-logit":
        p = special.expit(eta)
        t = np.ones_like(eta) if trials is None else trials
        return t * p, t * p * (1.0 - p)
    if family.kind == "poisson-log":
        mu = np.exp(eta)
        return mu, mu
    return eta, np.ones_like(eta)


def fitted_mean(family: GlmFamily, data: GlmData, beta) -> np.ndarray:
    """``E[y | beta]`` at the observed design."""
    mu, _ = mean_function(family, data.Z @ np.asarray(beta, float), _trials(family, data))
    return mu


def loglik(family: GlmFamily, data: GlmData, beta, weights=None, return_saturation=False):
    """Sum of per-observation log densities.

    Linear predictors are clipped to ``|eta| <= 30``; ``return_saturation``
    also returns whether any clipping occurred. Responses may be real-valued
    (e.g. fitted means) for every family; the combinatorial constants use
    ``gammaln``.
    """
    terms, saturated = loglik_terms(family, data, beta, with_flag=True)
    total = float(np.sum(terms if weights is None else np.asarray(weights) * terms))
    return (total, saturated) if return_saturation else total


def loglik_terms(family: GlmFamily, data: GlmData, beta, with_flag=False):
    beta = np.asarray(beta, dtype=float)
    if beta.size != data.p:
        raise ContractError(f"beta has {beta.size} entries, design has {data.p} columns")
    eta_raw = data.Z @ beta
    saturated = bool(np.any(np.abs(eta_raw) > ETA_CLIP))
    eta = np.clip(eta_raw, -ETA_CLIP, ETA_CLIP)
    y = data.y
    if family.kind == "binomial-logit":
        t = _trials(family, data)
        logc = special.gammaln(t + 1) - special.gammaln(y + 1) - special.gammaln(t - y + 1)
        terms = logc + y * special.log_expit(eta) + (t - y) * special.log_expit(-eta)
    elif family.kind == "poisson-log":
        terms = y * eta - np.exp(eta) - special.gammaln(y + 1)
    else:
        s2 = family.dispersion
        terms = -0.5 * np.log(2 * np.pi * s2) - 0.5 * (y - eta) ** 2 / s2
    return (terms, saturated) if with_flag else terms


def score_terms(family: GlmFamily, data: GlmData, beta) -> np.ndarray:
    """Per-observation score contributions, shape ``(n, p)``."""
    mu = fitted_mean(family, data, beta)
    return data.Z * ((data.y - mu) / family.dispersion)[:, None]


def score(family: GlmFamily, data: GlmData, beta, weights=None) -> np.ndarray:
    r = (data.y - fitted_mean(family, data, beta)) / family.dispersion
    if weights is not None:
        r = r * weights
    return data.Z.T @ r


def fisher_information(family: GlmFamily, data: GlmData, beta, weights=None) -> np.ndarray:
    _, v = mean_function(family, data.Z @ np.asarray(beta, float), _trials(family, data))
    w = v / family.dispersion
    if weights is not None:
        w = w * weights
    return (data.Z * w[:, None]).T @ data.Z


def _check_rank(Z):
    rank = np.linalg.matrix_rank(Z)
    if rank < Z.shape[1]:
        raise DesignError(f"design matrix has rank {rank} < {Z.shape[1]} columns")


def _start(family: GlmFamily, data: GlmData, weights=None):
    """Intercept-only style starting values via a least-squares fit on the link scale."""
    t = _trials(family, data)
    y = data.y
    if family.kind == "binomial-logit":
        p = (y + 0.5) / (t + 1.0)
        z = special.logit(p)
    elif family.kind == "poisson-log":
        z = np.log(y + 0.5)
    else:
        z = y
    w = np.ones(data.n) if weights is None else np.asarray(weights, float)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(data.Z * sw[:, None], z * sw, rcond=None)
    return beta


def irls_mle(family: GlmFamily, data: GlmData, weights=None, max_iter=100, tol=1e-12, start=None) -> GlmFit:
    """Maximum likelihood by iteratively reweighted least squares.

    ``weights`` are prior (case) weights; the weighted fit maximizes
    ``sum(w_i * loglik_i)``. For the Gaussian family ``fit.dispersion`` is the
    profile estimate RSS/n, and ``cov`` uses ``family.dispersion``.
    """
    _check_rank(data.Z)
    w_case = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    if family.kind == "gaussian-identity":
        sw = np.sqrt(w_case)
        beta, *_ = np.linalg.lstsq(data.Z * sw[:, None], data.y * sw, rcond=None)
        info = fisher_information(family, data, beta, w_case)
        resid = data.y - data.Z @ beta
        return GlmFit(
            beta,
            np.linalg.inv(info),
            True,
            1,
            float(np.sum(w_case * resid**2) / np.sum(w_case)),
            float(np.abs(score(family, data, beta, w_case)).max()),
        )

    beta = _start(family, data, w_case) if start is None else np.asarray(start, float).copy()
    ll = loglik(family, data, beta, w_case)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = score(family, data, beta, w_case)
        H = fisher_information(family, data, beta, w_case)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise SeparationError("information matrix became singular", last=beta) from exc
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c = loglik(family, data, cand, w_case)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-6:
                break
            t *= 0.5
        beta, ll = cand, ll_c
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise SeparationError(
                f"coefficient norm exceeded {SEPARATION_NORM:g}; data look separated", last=beta
            )
        if np.max(np.abs(t * step)) <= tol * (1.0 + np.max(np.abs(beta))):
            converged = True
            break
    if not converged:
        if np.max(np.abs(data.Z @ beta)) >= ETA_CLIP:
            # the likelihood keeps rising only as fitted means hit the boundary
            raise SeparationError("linear predictors reached the clipping bound; data look separated", last=beta)
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", last=beta)
    # one more Newton step polishes the score to machine precision
    g = score(family, data, beta, w_case)
    H = fisher_information(family, data, beta, w_case)
    beta = beta + np.linalg.solve(H, g)
    H = fisher_information(family, data, beta, w_case)
    return GlmFit(
        beta,
        np.linalg.inv(H),
        True,
        it + 1,
        1.0,
        float(np.abs(score(family, data, beta, w_case)).max()),
    )


def weighted_mle(family: GlmFamily, data: GlmData, weights, **kw) -> np.ndarray:
    return irls_mle(family, data, weights=weights, **kw).coef


def sandwich_cov(family: GlmFamily, data: GlmData, beta) -> np.ndarray:
    """``A^{-1} B A^{-1}`` with A the information and B the outer product of scores."""
    A_inv = np.linalg.inv(fisher_information(family, data, beta))
    S = score_terms(family, data, beta)
    return A_inv @ (S.T @ S) @ A_inv


# ---------------------------------------------------------------------------
# robust quasi-likelihood (Mallows-type, Huber psi on Pearson residuals)


def huber_psi(r, c):
    """Huber's psi: identity on [-c, c], clipped outside."""
    return np.clip(r, -c, c)


def _binomial_table(trials):
    """Grid, support mask and log binomial coefficients for fixed trials."""
    k = np.arange(int(np.max(trials)) + 1, dtype=float)
    t = trials[:, None]
    inside = k[None, :] <= t
    tk = np.where(inside, t - k[None, :], 0.0)
    logc = special.gammaln(t + 1) - special.gammaln(k[None, :] + 1) - special.gammaln(tk + 1)
    return k, inside, tk, logc


def _support(family: GlmFamily, mu, trials, table=None):
    """Support grid and pmf for discrete families, padded to a common width."""
    if family.kind == "binomial-logit":
        k, inside, tk, logc = table if table is not None else _binomial_table(trials)
        p = np.clip(mu / trials, 0.0, 1.0)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            logpmf = logc + special.xlogy(k[None, :], p) + special.xlog1py(tk, -p)
        return k, np.where(inside, np.exp(logpmf), 0.0)
    upper = int(np.max(mu + 20.0 * np.sqrt(mu) + 30.0))
    k = np.arange(upper + 1, dtype=float)
    with np.errstate(divide="ignore"):
        logpmf = special.xlogy(k[None, :], mu[:, None]) - mu[:, None] - special.gammaln(k[None, :] + 1)
    return k, np.exp(logpmf)


def _huber_moments(family: GlmFamily, mu, v, trials, c, scale, table=None):
    """E[psi(r)], E[psi(r) r] and E[psi(r)^2] for Pearson residual r under the model."""
    if family.kind == "gaussian-identity":
        zc = c
        e_psi = np.zeros_like(mu)
        e_psi_r = np.full_like(mu, 2 * stats.norm.cdf(zc) - 1)
        e_psi2 = e_psi_r - 2 * zc * stats.norm.pdf(zc) + 2 * zc**2 * stats.norm.sf(zc)
        return e_psi, e_psi_r, e_psi2
    k, pmf = _support(family, mu, trials, table)
    sd = np.sqrt(np.maximum(v, 1e-300))
    r = (k[None, :] - mu[:, None]) / sd[:, None]
    ps = huber_psi(r, c)
    return (pmf * ps).sum(1), (pmf * ps * r).sum(1), (pmf * ps * ps).sum(1)


def robust_mest(family: GlmFamily, data: GlmData, c: float = 1.2, max_iter: int = 200, tol: float = 1e-10) -> GlmFit:
    """Robust quasi-likelihood M-estimator with Huber psi on Pearson residuals.

    Solves ``sum_i [psi_c(r_i) - E psi_c(r_i)] / sqrt(V_i) * dmu_i/deta * z_i = 0``
    with ``r_i = (y_i - mu_i) / sqrt(V_i)`` and unit covariate weights. The
    expectation term makes the equations Fisher consistent. Fisher scoring on
    the expected Jacobian; covariance is the sandwich ``M^-1 Q M^-1``. For the
    Gaussian family the residual scale is re-estimated each sweep by the
    normalized MAD.
    """
    if c <= 0:
        raise ContractError("Huber constant must be positive")
    _check_rank(data.Z)
    t = _trials(family, data)
    beta = irls_mle(family, data).coef if family.kind != "gaussian-identity" else _start(family, data)
    scale = 1.0
    Z = data.Z
    table = _binomial_table(t) if family.kind == "binomial-logit" else None
    it = 0
    for it in range(1, max_iter + 1):
        eta = Z @ beta
        mu, v = mean_function(family, eta, t)
        if family.kind == "gaussian-identity":
            res = data.y - mu
            mad = np.median(np.abs(res - np.median(res))) * 1.482602218505602
            scale = mad**2 if mad > 0 else max(np.mean(res**2), 1e-300)
            v = np.full_like(mu, scale)
        sd = np.sqrt(v)
        r = (data.y - mu) / sd
        e_psi, e_psi_r, _ = _huber_moments(family, mu, v, t, c, scale, table)
        # dmu/deta equals V for canonical links (binomial, poisson); 1 for identity
        dmu = v if family.kind != "gaussian-identity" else np.ones_like(mu)
        a = (huber_psi(r, c) - e_psi) * dmu / sd
        U = Z.T @ a
        m_w = e_psi_r * dmu**2 / v
        M = (Z * m_w[:, None]).T @ Z
        try:
            step = np.linalg.solve(M, U)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("robust scoring matrix became singular", last=beta) from exc
        beta = beta + step
        if np.linalg.norm(beta) > SEPARATION_NORM:
            raise SeparationError("robust fit diverged", last=beta)
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(beta))):
            break
    else:
        raise ConvergenceError(f"robust M-estimation did not converge in {max_iter} iterations", last=beta)
    mu, v = mean_function(family, Z @ beta, t)
    if family.kind == "gaussian-identity":
        v = np.full_like(mu, scale)
    dmu = v if family.kind != "gaussian-identity" else np.ones_like(mu)
    e_psi, e_psi_r, e_psi2 = _huber_moments(family, mu, v, t, c, scale, table)
    M = (Z * (e_psi_r * dmu**2 / v)[:, None]).T @ Z
    Q = (Z * ((e_psi2 - e_psi**2) * dmu**2 / v)[:, None]).T @ Z
    M_inv = np.linalg.inv(M)
    cov = M_inv @ Q @ M_inv
    return GlmFit(beta, 0.5 * (cov + cov.T), True, it, float(scale), float(np.abs(U).max()))


# ---------------------------------------------------------------------------
# L1-penalized fitting


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _penalized_objective(family, data, beta, lam):
    return -loglik(family, data, beta) + lam * np.abs(beta[1:]).sum()


def lasso_kkt_violation(family: GlmFamily, data: GlmData, beta, lam) -> float:
    """Largest violation of the KKT conditions of the L1-penalized fit."""
    g = -score(family, data, beta)
    viol = [abs(g[0])]
    for j in range(1, data.p):
        if beta[j] != 0:
            viol.append(abs(g[j] + lam * np.sign(beta[j])))
        else:
            viol.append(max(abs(g[j]) - lam, 0.0))
    return float(max(viol))


def lasso_fit(
    family: GlmFamily,
    data: GlmData,
    working_response,
    lam: float,
    start=None,
    max_outer: int = 200,
    tol: float = 1e-10,
    kkt_tol: float = 1e-6,
) -> np.ndarray:
    """L1-penalized maximum likelihood by proximal Newton with coordinate descent.

    Minimizes ``-loglik(beta; working_response) + lam * sum_{j>=1} |beta_j|``;
    column 0 of the design is the unpenalized intercept. The working response
    may be real-valued (fitted means are legal).
    """
    if lam < 0:
        raise ContractError("penalty must be nonnegative")
    d = data.with_response(working_response)
    _check_rank(d.Z)
    Z = d.Z
    p = d.p
    beta = np.zeros(p) if start is None else np.asarray(start, float).copy()
    if start is None:
        beta[0] = _start(family, d.subset_columns([0])).item()
    t = _trials(family, d)
    obj = _penalized_objective(family, d, beta, lam)
    for _ in range(max_outer):
        eta = Z @ beta
        mu, v = mean_function(family, eta, t)
        w = np.maximum(v / family.dispersion, 1e-12)
        # canonical links: dmu/deta equals the variance function
        z = d.y if family.kind == "gaussian-identity" else eta + (d.y - mu) / np.maximum(v, 1e-12)
        new = beta.copy()
        r = z - Z @ new
        h = (Z * Z * w[:, None]).sum(0)
        for _sweep in range(10000):
            max_delta = 0.0
            for j in range(p):
                old = new[j]
                g = np.dot(w * Z[:, j], r) + h[j] * old
                nj = g / h[j] if j == 0 else _soft(g, lam) / h[j]
                if nj != old:
                    r -= Z[:, j] * (nj - old)
                    new[j] = nj
                    max_delta = max(max_delta, abs(nj - old) * np.sqrt(h[j]))
            if max_delta < 1e-13:
                break
        step = new - beta
        s = 1.0
        while True:
            cand = beta + s * step
            obj_c = _penalized_objective(family, d, cand, lam)
            if obj_c <= obj + 1e-12 * abs(obj) or s < 1e-8:
                break
            s *= 0.5
        beta, obj = cand, obj_c
        if np.max(np.abs(s * step)) <= tol * (1.0 + np.max(np.abs(beta))):
            break
    else:
        raise ConvergenceError("lasso proximal Newton did not converge", last=beta)
    viol = lasso_kkt_violation(family, d, beta, lam)
    if viol > kkt_tol:
        raise ConvergenceError(f"KKT conditions violated by {viol:.3g}", last=beta)
    return beta


def lambda_max(family: GlmFamily, data: GlmData, working_response) -> float:
    """Smallest penalty at which every slope is exactly zero."""
    d = data.with_response(working_response)
    b0 = irls_mle(family, d.subset_columns([0])).coef
    beta = np.zeros(d.p)
    beta[0] = b0[0]
    g = score(family, d, beta)
    return float(np.max(np.abs(g[1:]))) if d.p > 1 else 0.0


# ---------------------------------------------------------------------------
# KL divergence between product densities


def kl_glm(family: GlmFamily, data: GlmData, theta_from, theta_to) -> float:
    """KL divergence of the n-observation product density from ``theta_from`` to ``theta_to``."""
    a = np.asarray(theta_from, float)
    b = np.asarray(theta_to, float)
    if a.size != data.p or b.size != data.p:
        raise ContractError("parameter dimension does not match design")
    ea = data.Z @ a
    eb = data.Z @ b
    with np.errstate(all="ignore"):
        if family.kind == "binomial-logit":
            t = _trials(family, data)
            p = special.expit(ea)
            terms = t * (
                p * (special.log_expit(ea) - special.log_expit(eb))
                + (1 - p) * (special.log_expit(-ea) - special.log_expit(-eb))
            )
        elif family.kind == "poisson-log":
            mu = np.exp(ea)
            nu = np.exp(eb)
            terms = mu * (ea - eb) - mu + nu
        else:
            terms = (ea - eb) ** 2 / (2.0 * family.dispersion)
    total = float(np.sum(terms))
    if not np.isfinite(total):
        return float("inf")
    return max(total, 0.0)


__all__ = [
    "GlmFamily",
    "GlmData",
    "GlmFit",
    "loglik",
    "loglik_terms",
    "score",
    "score_terms",
    "fisher_information",
    "fitted_mean",
    "mean_function",
    "irls_mle",
    "weighted_mle",
    "sandwich_cov",
    "huber_psi",
    "robust_mest",
    "lasso_fit",
    "lasso_kkt_violation",
    "lambda_max",
    "kl_glm",
]
