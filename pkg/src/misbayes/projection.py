"""KL projection of a reference GLM posterior onto restricted submodels.

A draw ``theta`` of the full model is projected by fitting the submodel to
the fitted means ``E[y | theta]`` ("fitting to the fit"); for canonical-link
exponential families this minimizes the KL divergence between the implied
data densities. Distances, the explanatory-power statistic ``delta`` and the
relative loss ``L`` follow from :func:`misbayes.glm.kl_glm`.
"""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.cluster.vq import ClusterError, kmeans2

from . import glm
from .errors import ContractError, ConvergenceError, DegeneracyError, DesignError
from .rng import as_stream

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.05
L1_TOL = 1e-6


@dataclass(frozen=True)
class ReferencePosterior:
    family: glm.GlmFamily
    data: glm.GlmData
    draws: np.ndarray

    def __post_init__(self):
        draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        if draws.shape[0] < 1:
            raise ContractError("reference posterior needs at least one draw")
        if draws.shape[1] != self.data.p:
            raise ContractError(f"draws have {draws.shape[1]} columns, design has {self.data.p}")
        object.__setattr__(self, "draws", draws)

    @property
    def T(self) -> int:
        return self.draws.shape[0]

    def fitted_means(self) -> np.ndarray:
        """``T x n`` matrix of ``E[y_i | theta_t]``."""
        return np.array([glm.fitted_mean(self.family, self.data, th) for th in self.draws])


@dataclass(frozen=True)
class SubmodelSpec:
    """Either an active covariate subset (``active`` includes column 0, the
    intercept) or an L1 ball of radius ``lam`` on the slopes."""

    kind: str
    active: Optional[tuple] = None
    lam: Optional[float] = None
    baseline: bool = False
    label: str = ""

    def __post_init__(self):
        if self.kind == "active-subset":
            if self.active is None or self.lam is not None:
                raise ContractError("active-subset specs need an active set and no radius")
            active = tuple(sorted(set(int(j) for j in self.active)))
            if 0 not in active:
                raise ContractError("the active set must include the intercept (column 0)")
            object.__setattr__(self, "active", active)
        elif self.kind == "l1-ball":
            if self.lam is None or self.active is not None:
                raise ContractError("l1-ball specs need a radius and no active set")
            if not self.lam > 0:
                raise ContractError("L1 radius must be positive")
        else:
            raise ContractError(f"unknown submodel kind {self.kind!r}")
        if not self.label:
            lab = f"S{{{','.join(map(str, self.active))}}}" if self.kind == "active-subset" else f"L1<={self.lam:g}"
            object.__setattr__(self, "label", lab)

    @classmethod
    def subset(cls, active: Sequence[int], label: str = "") -> "SubmodelSpec":
        return cls("active-subset", active=tuple(active), label=label)

    @classmethod
    def l1_ball(cls, lam: float, label: str = "") -> "SubmodelSpec":
        return cls("l1-ball", lam=float(lam), label=label)

    @classmethod
    def null(cls) -> "SubmodelSpec":
        return cls("active-subset", active=(0,), baseline=True, label="N")

    @classmethod
    def full(cls, p: int) -> "SubmodelSpec":
        return cls("active-subset", active=tuple(range(p)), label="F")

    def size(self, p: int) -> int:
        """Number of active covariates (slopes), used to rank simplicity."""
        if self.kind == "active-subset":
            return len(self.active) - 1
        return p - 1


@dataclass
class ProjectionReport:
    spec: SubmodelSpec
    projected: np.ndarray
    distances: np.ndarray
    delta: float
    failures: list = field(default_factory=list)
    L: Optional[float] = None
    draw_index: Optional[np.ndarray] = None

    def rows(self):
        idx = self.draw_index if self.draw_index is not None else np.arange(len(self.distances))
        for i, th, d in zip(idx, self.projected, self.distances):
            yield int(i), th, float(d)

    def to_csv(self, path, column_names: Sequence[str] = ()) -> None:
        p = self.projected.shape[1]
        names = list(column_names) or [f"theta_{j}" for j in range(p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw"] + names + ["distance"])
            for i, th, d in self.rows():
                w.writerow([i] + [repr(float(v)) for v in th] + [repr(d)])


# ---------------------------------------------------------------------------
# single projections


def _l1_norm(beta) -> float:
    return float(np.abs(beta[1:]).sum())


def _project_response(mu, spec: SubmodelSpec, family: glm.GlmFamily, data: glm.GlmData, start=None) -> np.ndarray:
    """Constrained MLE of the submodel with the response replaced by ``mu``."""
    p = data.p
    d = data.with_response(mu)
    if spec.kind == "active-subset":
        sub = d.subset_columns(spec.active)
        s0 = None if start is None else np.asarray(start)[list(spec.active)]
        fit = glm.irls_mle(family, sub, start=s0)
        out = np.zeros(p)
        out[list(spec.active)] = fit.coef
        return out
    lam = spec.lam
    full = glm.irls_mle(family, d, start=start).coef
    if _l1_norm(full) <= lam:
        return full
    pen_hi = glm.lambda_max(family, data, mu)
    warm = {"beta": None}

    def excess(pen):
        beta = glm.lasso_fit(family, data, mu, pen, start=warm["beta"])
        warm["beta"] = beta
        return _l1_norm(beta) - lam

    if excess(pen_hi) > 0:
        raise ConvergenceError("L1 radius not bracketed: slopes nonzero at the largest penalty")
    pen = optimize.brentq(excess, 0.0, pen_hi, xtol=1e-14 * max(pen_hi, 1.0), rtol=4 * np.finfo(float).eps)
    beta = glm.lasso_fit(family, data, mu, pen, start=warm["beta"])
    if _l1_norm(beta) > lam + L1_TOL:
        # step to the feasible side of the root
        hi = pen
        for _ in range(60):
            hi = hi + max(1e-12, 1e-9 * pen_hi)
            beta = glm.lasso_fit(family, data, mu, hi, start=beta)
            if _l1_norm(beta) <= lam + L1_TOL:
                break
        else:
            raise ConvergenceError("could not meet the L1 radius", last=beta)
    return beta


def project_draw(theta, spec: SubmodelSpec, family: glm.GlmFamily, data: glm.GlmData) -> np.ndarray:
    """KL projection of one full-model draw onto the submodel ``spec``."""
    theta = np.asarray(theta, dtype=float)
    if theta.size != data.p:
        raise ContractError("theta dimension does not match the design")
    mu = glm.fitted_mean(family, data, theta)
    return _project_response(mu, spec, family, data, start=theta)


def project_posterior(ref: ReferencePosterior, spec: SubmodelSpec) -> ProjectionReport:
    """Draw-by-draw projection with KL distances and ``delta = mean distance``."""
    projected, dist, idx, failures = [], [], [], []
    for t, th in enumerate(ref.draws):
        try:
            ts = project_draw(th, spec, ref.family, ref.data)
        except (ConvergenceError, DegeneracyError) as exc:
            failures.append((t, str(exc)))
            continue
        projected.append(ts)
        dist.append(glm.kl_glm(ref.family, ref.data, th, ts))
        idx.append(t)
    if len(failures) > MAX_FAILURE_FRACTION * ref.T:
        raise ConvergenceError(f"{len(failures)} of {ref.T} draw projections failed (first: {failures[0][1]})")
    if failures:
        log.warning("%d draw projections failed and were excluded", len(failures))
    dist = np.maximum(np.array(dist), 0.0)
    return ProjectionReport(spec, np.array(projected).reshape(-1, ref.data.p), dist, float(dist.mean()), failures,
                            draw_index=np.array(idx))


def relative_loss(report_S: ProjectionReport, report_N: ProjectionReport, tol: float = 1e-8) -> float:
    """``L = delta(F,S) / delta(F,N)`` clamped to [0, 1]."""
    if not report_N.delta > 0:
        raise DegeneracyError("delta of the null model is zero; the reference has no explanatory power to lose")
    L = report_S.delta / report_N.delta
    if L > 1.0 + tol:
        warnings.warn(f"relative loss {L:.6g} exceeds 1; clamped", RuntimeWarning, stacklevel=2)
    return float(min(max(L, 0.0), 1.0))


@dataclass(frozen=True)
class Selection:
    spec: SubmodelSpec
    loss: float
    no_selection: bool
    table: tuple


def select_submodel(ref: ReferencePosterior, candidates: Sequence[SubmodelSpec], threshold: float) -> Selection:
    """Simplest candidate with ``L < threshold``; ties go to the smallest loss.

    ``threshold = 1`` admits every candidate. When no candidate qualifies the full model is returned with
    ``no_selection=True``.
    """
    if not candidates:
        raise ContractError("need at least one candidate submodel")
    if not 0 < threshold <= 1:
        raise ContractError("threshold must lie in (0, 1]")
    p = ref.data.p
    null = project_posterior(ref, SubmodelSpec.null())
    table = []
    for spec in candidates:
        rep = project_posterior(ref, spec)
        table.append((spec, relative_loss(rep, null), rep.delta))
    # threshold 1 is vacuous: every candidate qualifies, including N with L = 1
    ok = [row for row in table if row[1] < threshold or threshold >= 1.0]
    if not ok:
        return Selection(SubmodelSpec.full(p), 0.0, True, tuple(table))
    best = min(ok, key=lambda row: (row[0].size(p), row[1]))
    return Selection(best[0], best[1], False, tuple(table))


def point_projection(ref: ReferencePosterior, spec: SubmodelSpec, prediction_design=None, trials=None) -> np.ndarray:
    """Single projection onto the posterior-predictive means.

    For canonical-link exponential families the expected negative
    log-likelihood under the predictive depends on it only through its mean,
    so the sum of KL divergences is minimized by fitting to those means.
    """
    data = ref.data
    if prediction_design is not None:
        Zp = np.atleast_2d(np.asarray(prediction_design, dtype=float))
        if Zp.shape[1] != data.p:
            raise ContractError("prediction design has the wrong number of columns")
        if trials is None and ref.family.kind == "binomial-logit":
            trials = data.trials if data.trials is not None and Zp.shape[0] == data.n else np.ones(Zp.shape[0])
        data = glm.GlmData(np.zeros(Zp.shape[0]), Zp, trials, column_names=data.column_names)
    mu = np.mean([glm.fitted_mean(ref.family, data, th) for th in ref.draws], axis=0)
    return _project_response(mu, spec, ref.family, data, start=ref.draws.mean(axis=0))


@dataclass(frozen=True)
class ClusteredProjection:
    projected: np.ndarray
    weights: np.ndarray
    labels: np.ndarray


def _kmeans(X, k, gen):
    if k == X.shape[0]:
        return np.arange(k)
    if k == 1:
        return np.zeros(X.shape[0], dtype=int)
    for attempt in range(2):
        try:
            _, labels = kmeans2(X, k, iter=50, minit="++", missing="raise", seed=gen)
            return labels
        except ClusterError:
            if attempt == 1:
                raise DegeneracyError(f"k-means left a cluster empty twice with k={k}") from None
            log.info("empty k-means cluster; reseeding")


def clustered_projection(ref: ReferencePosterior, spec: SubmodelSpec, k: int, rng=0) -> ClusteredProjection:
    """k-means on the draws, one projection per cluster weighted by its size.

    Each cluster is projected onto the mean of its members' fitted values,
    so ``k = 1`` is the point projection and ``k = T`` the draw-by-draw set.
    """
    if not 1 <= k <= ref.T:
        raise ContractError(f"need 1 <= k <= T = {ref.T}")
    gen = as_stream(rng).generator()
    labels = _kmeans(ref.draws, k, gen)
    mus = ref.fitted_means()
    projected = np.empty((k, ref.data.p))
    weights = np.empty(k)
    for c in range(k):
        members = labels == c
        mu = mus[members].mean(axis=0)
        projected[c] = _project_response(mu, spec, ref.family, ref.data, start=ref.draws[members].mean(axis=0))
        weights[c] = members.sum() / ref.T
    return ClusteredProjection(projected, weights, labels)


# ---------------------------------------------------------------------------
# Bayesian bootstrap


def bayesian_bootstrap_project(loglik_terms: Callable, n: int, B: int, rng, init, **minimize_kw) -> np.ndarray:
    """Weighted-likelihood bootstrap with Dirichlet(1, ..., 1) weights ``w``.

    Each row of the result maximizes ``sum_i w_i * loglik_terms(eta)[i]``.
    Failed optimizations are recorded as rows of NaN.
    """
    if n < 1 or B < 1:
        raise ContractError("need n >= 1 and B >= 1")
    gen = as_stream(rng).generator()
    W = gen.dirichlet(np.ones(n), size=B)
    init = np.atleast_1d(np.asarray(init, dtype=float))
    out = np.empty((B, init.size))
    opts = {"method": "BFGS", **minimize_kw}
    for b in range(B):
        w = W[b]
        res = optimize.minimize(lambda eta: -float(np.dot(w, loglik_terms(eta))), init, **opts)
        out[b] = res.x if res.success or np.isfinite(res.fun) else np.nan
    return out


def glm_bayesian_bootstrap(family: glm.GlmFamily, data: glm.GlmData, B: int, rng, weights=None) -> np.ndarray:
    """Weighted-likelihood bootstrap for a GLM by weighted IRLS.

    ``weights`` may fix the weight matrix (``B x n``); otherwise rows are drawn
    from Dirichlet(1_n). Draws whose weighted fit diverges are NaN rows.
    """
    if weights is None:
        gen = as_stream(rng).generator()
        W = gen.dirichlet(np.ones(data.n), size=B)
    else:
        W = np.atleast_2d(np.asarray(weights, dtype=float))
    out = np.empty((W.shape[0], data.p))
    fails = 0
    for b, w in enumerate(W):
        try:
            # the maximizer is invariant to rescaling the weights; n*w keeps IRLS well scaled
            out[b] = glm.weighted_mle(family, data, data.n * w)
        except (ConvergenceError, DesignError) as exc:
            out[b] = np.nan
            fails += 1
            log.debug("bootstrap draw %d failed: %s", b, exc)
    if fails:
        log.warning("%d weighted fits failed", fails)
    return out


__all__ = [
    "ReferencePosterior",
    "SubmodelSpec",
    "ProjectionReport",
    "ClusteredProjection",
    "Selection",
    "project_draw",
    "project_posterior",
    "relative_loss",
    "select_submodel",
    "point_projection",
    "clustered_projection",
    "bayesian_bootstrap_project",
    "glm_bayesian_bootstrap",
]
