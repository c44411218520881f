"""Exact, cut and semi-modular posteriors for two-module systems.

Every sampler accepts either a generic :class:`TwoModuleModel` (with data
``(X, Y)``) or a :class:`RandomEffectsModel`, which carries its own sufficient
statistics and uses the closed-form pieces of that testbed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from ..errors import ContractError, DegeneracyError, InitializationError
from ..mcmc import OPTIMAL_RW_SCALE, Chain, MhConfig, kl_gauss_moment, rw_metropolis, scaled_proposal
from ..rng import RngStream, as_stream
from .random_effects import LOG_PSI2_BOUNDS, RandomEffectsModel, sample_log_psi2_grid

log = logging.getLogger(__name__)

ZETA_SAMPLERS = ("mh", "grid", "none")
OPTIMAL_SCALE2 = OPTIMAL_RW_SCALE**2


@dataclass(frozen=True)
class TwoModuleModel:
    """Joint model ``f1(X|phi) f2(Y|zeta,phi) pi(phi) pi(zeta|phi)``.

    The four callables return log densities; ``phi`` and ``zeta`` are 1-d
    arrays of length ``phi_dim`` and ``zeta_dim``.
    """

    logf1: Callable
    logf2: Callable
    logprior_phi: Callable
    logprior_zeta_given_phi: Callable
    phi_dim: int
    zeta_dim: int
    phi_names: tuple = ()
    zeta_names: tuple = ()

    def __post_init__(self):
        if self.phi_dim < 1 or self.zeta_dim < 1:
            raise ContractError("both parameter blocks need dimension >= 1")
        if not self.phi_names:
            object.__setattr__(self, "phi_names", tuple(f"phi_{j + 1}" for j in range(self.phi_dim)))
        if not self.zeta_names:
            object.__setattr__(self, "zeta_names", tuple(f"zeta_{j + 1}" for j in range(self.zeta_dim)))

    @property
    def names(self) -> tuple:
        return tuple(self.zeta_names) + tuple(self.phi_names)

    def split(self, x):
        return x[: self.zeta_dim], x[self.zeta_dim :]

    def log_joint(self, X, Y, zeta, phi) -> float:
        return float(
            self.logf1(X, phi) + self.logf2(Y, zeta, phi) + self.logprior_phi(phi) + self.logprior_zeta_given_phi(zeta, phi)
        )

    def log_cut_stage1(self, X, phi) -> float:
        return float(self.logf1(X, phi) + self.logprior_phi(phi))

    def log_zeta_conditional(self, Y, zeta, phi) -> float:
        return float(self.logf2(Y, zeta, phi) + self.logprior_zeta_given_phi(zeta, phi))


@dataclass(frozen=True)
class SmpConfig:
    gamma: float
    mode: str = "power-smp"
    inner_iters: int = 200
    I: int = 2000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.mode not in ("power-smp", "lin-smp"):
            raise ContractError(f"unknown SMP mode {self.mode!r}")
        if self.inner_iters < 1 or self.I < 1:
            raise ContractError("inner_iters and I must be >= 1")


# ---------------------------------------------------------------------------
# Laplace approximation used to build default proposals


def _fd_hessian(f, x, h=1e-3):
    d = x.size
    H = np.empty((d, d))
    steps = h * np.maximum(1.0, np.abs(x))
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = steps[i]
            ej[j] = steps[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * steps[i] * steps[j])
            H[i, j] = H[j, i] = val
    return H


def _fd_jacobian(g, x, h=1e-5):
    d = x.size
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h * max(1.0, abs(x[i]))
        H[:, i] = (g(x + e) - g(x - e)) / (2 * e[i])
    return 0.5 * (H + H.T)


def laplace_approximation(logp: Callable, x0, grad: Optional[Callable] = None):
    """Mode and inverse negative Hessian of ``logp``.

    Eigenvalues of the negative Hessian are floored at ``1e-8`` times the
    largest so that the returned covariance is always usable as a proposal.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def neg(x):
        v = logp(x)
        return 1e300 if not np.isfinite(v) else -v

    jac = (lambda x: -grad(x)) if grad is not None else None
    res = optimize.minimize(neg, x0, jac=jac, method="BFGS")
    mode = res.x if np.isfinite(logp(res.x)) and logp(res.x) >= logp(x0) else x0
    H = _fd_jacobian(grad, mode) if grad is not None else _fd_hessian(logp, mode)
    w, V = np.linalg.eigh(-0.5 * (H + H.T))
    if not np.isfinite(w).all() or w[-1] <= 0:
        return mode, np.eye(mode.size)
    w = np.maximum(w, 1e-8 * w[-1])
    return mode, (V / w) @ V.T


def _auto_cov(cfg: MhConfig, logp, x0, grad=None):
    if cfg.proposal_cov is not None:
        return np.atleast_1d(np.asarray(x0, float)), cfg.proposal_cov
    mode, cov = laplace_approximation(logp, x0, grad)
    return mode, scaled_proposal(cov)


def _last(chain: Chain, I: int) -> np.ndarray:
    if len(chain) < I:
        raise ContractError(f"sampler stored {len(chain)} draws, fewer than the {I} requested")
    return chain.draws[-I:]


def _unpack(data):
    if data is None:
        raise ContractError("two-module samplers need data = (X, Y)")
    X, Y = data
    return X, Y


# ---------------------------------------------------------------------------
# random-effects pieces


def _re_stage1(model: RandomEffectsModel, cfg: MhConfig, stream: RngStream) -> Chain:
    u0 = model.mode_log_cut()
    cov = cfg.proposal_cov
    if cov is None:
        cov = scaled_proposal(np.eye(model.N) * 2.0 / (model.J - 1))
    return rw_metropolis(model.log_cut, u0, cfg.with_cov(cov), stream, names=model.phi_names)


def _default_outer(I: int) -> MhConfig:
    return MhConfig(1000 + 50 * I, thin=50, burn_in=1000)


def _re_zeta(model: RandomEffectsModel, phi2: np.ndarray, sampler: str, inner_cfg: Optional[MhConfig], stream: RngStream):
    """Draw ``(psi^2, beta)`` from ``pi(zeta | zbar, phi)`` for each row of ``phi2``."""
    I = phi2.shape[0]
    psi2 = np.empty(I)
    if sampler == "grid":
        u01 = stream.child(0).generator().random(I)
        psi2[:] = np.exp(sample_log_psi2_grid(model, phi2, u01))
    elif sampler == "mh":
        cfg = inner_cfg or MhConfig(200)
        lo, hi = LOG_PSI2_BOUNDS
        for i in range(I):
            p = phi2[i]

            def target(t, p=p):
                return float(model.log_psi2_conditional(t, p)[0])

            res = optimize.minimize_scalar(lambda t: -target(t), bounds=(lo, hi), method="bounded")
            t0 = float(res.x)
            if cfg.proposal_cov is None:
                h = 1e-3
                curv = -(target(t0 + h) - 2 * target(t0) + target(t0 - h)) / h**2
                var = 1.0 / curv if np.isfinite(curv) and curv > 0 else 1.0
                cov = np.array([[OPTIMAL_SCALE2 * var]])
            else:
                cov = cfg.proposal_cov
            inner = MhConfig(cfg.iterations, cov, thin=1, burn_in=cfg.iterations - 1)
            ch = rw_metropolis(target, [t0], inner, stream.child(1, i))
            psi2[i] = np.exp(ch.draws[-1, 0])
    else:
        raise ContractError(f"unknown zeta sampler {sampler!r}")
    gen = stream.child(2).generator()
    mean, var = model.beta_conditional(psi2[:, None], phi2)
    beta = mean + np.sqrt(var) * gen.standard_normal(phi2.shape)
    return psi2, beta


def _re_chain(model, phi2, psi2, beta, log_target, acceptance, config, seed):
    if psi2 is None:
        return Chain(phi2, log_target, acceptance, model.phi_names, config, seed)
    draws = np.column_stack([psi2, beta, phi2])
    return Chain(draws, log_target, acceptance, model.names, config, seed)


def _re_exact_phi(model: RandomEffectsModel, mh: Optional[MhConfig], stream: RngStream):
    """MH on ``(log psi^2, log phi^2)``; returns the raw chain on the log scale."""
    model.check_groups()
    mh = mh or MhConfig(max(20000, 200 * (model.N + 1)), thin=10)
    x0 = np.concatenate([[np.log(max(np.var(model.zbar), 1e-3))], model.mode_log_cut()])
    x0, cov = _auto_cov(mh, model.log_exact, x0, model.grad_log_exact)
    names = ("log_psi2",) + tuple(f"log_{n}" for n in model.phi_names)
    return rw_metropolis(model.log_exact, x0, mh.with_cov(cov), stream, names=names)


# ---------------------------------------------------------------------------
# public samplers


def exact_posterior(model, data=None, mh: Optional[MhConfig] = None, rng=0, init=None) -> Chain:
    """Conventional joint posterior of ``(zeta, phi)``.

    Random-effects models: RW-MH on ``(log psi^2, log phi^2)`` targeting the
    marginal posterior, then exact Gaussian draws of ``beta``. When
    ``mh.proposal_cov`` is ``None`` the proposal is ``2.38^2/d`` times the
    inverse negative Hessian at the mode, and the chain starts at the mode.
    Generic models need ``init = (zeta0, phi0)``.
    """
    stream = as_stream(rng)
    if isinstance(model, RandomEffectsModel):
        raw = _re_exact_phi(model, mh, stream.child(0))
        psi2 = np.exp(raw.draws[:, 0])
        phi2 = np.exp(raw.draws[:, 1:])
        mean, var = model.beta_conditional(psi2[:, None], phi2)
        beta = mean + np.sqrt(var) * stream.child(1).generator().standard_normal(phi2.shape)
        return _re_chain(model, phi2, psi2, beta, raw.log_target, raw.acceptance_rate, dict(raw.config), raw.seed)
    X, Y = _unpack(data)
    if init is None or mh is None:
        raise ContractError("generic exact_posterior needs init=(zeta0, phi0) and an MhConfig")
    x0 = np.concatenate([np.atleast_1d(init[0]), np.atleast_1d(init[1])]).astype(float)

    def target(x):
        z, p = model.split(x)
        return model.log_joint(X, Y, z, p)

    x0, cov = _auto_cov(mh, target, x0)
    return rw_metropolis(target, x0, mh.with_cov(cov), stream.child(0), names=model.names)


def _generic_inner(model: TwoModuleModel, Y, phis, inner_cfg: MhConfig, stream: RngStream, zeta0):
    """Independent inner chains on ``zeta`` for each outer ``phi`` draw; keeps final states."""
    kept = []
    failures = []
    z_prev = np.atleast_1d(np.asarray(zeta0, dtype=float))
    for i, phi in enumerate(phis):

        def target(z, phi=phi):
            return model.log_zeta_conditional(Y, z, phi)

        try:
            mode, cov = laplace_approximation(target, z_prev)
            if inner_cfg.proposal_cov is not None:
                cov = inner_cfg.proposal_cov
            else:
                cov = scaled_proposal(cov)
            cfg = MhConfig(inner_cfg.iterations, cov, thin=1, burn_in=inner_cfg.iterations - 1)
            ch = rw_metropolis(target, mode, cfg, stream.child(i))
        except (InitializationError, DegeneracyError) as exc:
            failures.append((i, str(exc)))
            continue
        z_prev = ch.draws[-1]
        kept.append((i, ch.draws[-1]))
    if failures:
        log.warning("%d inner chains failed and were skipped", len(failures))
    return kept, failures


def _assemble_generic(model, phis, kept, failures, config, seed):
    idx = [i for i, _ in kept]
    zetas = np.array([z for _, z in kept]).reshape(len(kept), model.zeta_dim)
    draws = np.column_stack([zetas, phis[idx]])
    config = dict(config)
    config["inner_failures"] = len(failures)
    return Chain(draws, np.full(len(idx), np.nan), float("nan"), model.names, config, seed)


def cut_posterior(
    model,
    data=None,
    I: int = 2000,
    inner_cfg: Optional[MhConfig] = None,
    rng=0,
    outer_cfg: Optional[MhConfig] = None,
    init=None,
    zeta_sampler: str = "mh",
) -> Chain:
    """Cut posterior by nested MCMC.

    Stage 1 runs RW-MH on ``f1(X|phi) pi(phi)`` and keeps its last ``I``
    stored draws. Stage 2 runs, for each of them, an independent inner chain
    on ``zeta`` targeting ``f2(Y|zeta,phi) pi(zeta|phi)``, started at the
    conditional mode, and keeps its final state. Module-two data are never
    read in stage 1.

    ``zeta_sampler`` (random-effects only): ``"mh"`` nested chains on
    ``log psi^2`` (default), ``"grid"`` exact inverse-CDF draws, or ``"none"``
    to return the ``phi^2`` block alone.
    """
    stream = as_stream(rng)
    outer_cfg = outer_cfg or _default_outer(I)
    inner_cfg = inner_cfg or MhConfig(200)
    if isinstance(model, RandomEffectsModel):
        if zeta_sampler not in ZETA_SAMPLERS:
            raise ContractError(f"unknown zeta sampler {zeta_sampler!r}")
        model.check_groups()
        stage1 = _re_stage1(model, outer_cfg, stream.child(0))
        phi2 = np.exp(_last(stage1, I))
        config = dict(stage1.config, I=I, inner_iterations=inner_cfg.iterations, zeta_sampler=zeta_sampler)
        if zeta_sampler == "none":
            return _re_chain(model, phi2, None, None, np.full(I, np.nan), stage1.acceptance_rate, config, stage1.seed)
        psi2, beta = _re_zeta(model, phi2, zeta_sampler, inner_cfg, stream.child(1))
        return _re_chain(model, phi2, psi2, beta, np.full(I, np.nan), stage1.acceptance_rate, config, stage1.seed)
    X, Y = _unpack(data)
    if init is None:
        raise ContractError("generic cut_posterior needs init=(zeta0, phi0)")
    zeta0, phi0 = (np.atleast_1d(np.asarray(v, float)) for v in init)

    def stage1_target(p):
        return model.log_cut_stage1(X, p)

    phi0, cov = _auto_cov(outer_cfg, stage1_target, phi0)
    stage1 = rw_metropolis(stage1_target, phi0, outer_cfg.with_cov(cov), stream.child(0), names=model.phi_names)
    phis = _last(stage1, I)
    kept, failures = _generic_inner(model, Y, phis, inner_cfg, stream.child(1), zeta0)
    config = dict(stage1.config, I=I, inner_iterations=inner_cfg.iterations)
    return _assemble_generic(model, phis, kept, failures, config, stage1.seed)


def re_cut_exact_sampler(model: RandomEffectsModel, I: int, rng=0, zeta: bool = True) -> Chain:
    """Independent draws from the closed-form random-effects cut posterior.

    ``phi_i^2`` is inverse-gamma with shape ``(J-1)/2`` and scale ``s_i^2/2``;
    ``psi^2`` comes from the adaptive-grid inverse CDF and ``beta`` from its
    Gaussian conditional. ``zeta=False`` returns the ``phi^2`` block only.
    """
    if I < 1:
        raise ContractError("I must be >= 1")
    model.check_groups()
    stream = as_stream(rng)
    a, b = model.cut_shape_scale()
    phi2 = b / stream.child(0).generator().gamma(a, 1.0, size=(I, model.N))
    config = {"sampler": "closed-form cut", "I": I}
    lt = np.full(I, np.nan)
    if not zeta:
        return _re_chain(model, phi2, None, None, lt, 1.0, config, (stream.master_seed, stream.path))
    psi2, beta = _re_zeta(model, phi2, "grid", None, stream.child(1))
    return _re_chain(model, phi2, psi2, beta, lt, 1.0, config, (stream.master_seed, stream.path))


def smp_posterior(
    model,
    data=None,
    cfg: SmpConfig = None,
    mh: Optional[MhConfig] = None,
    rng=0,
    init=None,
    zeta_sampler: str = "mh",
) -> Chain:
    """Semi-modular posterior.

    ``power-smp``: RW-MH on ``(zeta_tilde, phi)`` under
    ``f1(X|phi) f2(Y|zeta_tilde,phi)^gamma pi(phi) pi(zeta_tilde|phi)``; the
    last ``cfg.I`` ``phi`` draws each get an inner draw of ``zeta`` from
    ``pi(zeta|Y,phi)`` and ``zeta_tilde`` is discarded. For the random-effects
    model ``beta_tilde`` is integrated out analytically, leaving
    ``psi_tilde^2`` as the auxiliary block; at ``gamma = 0`` the powered
    likelihood is constant and the cut stage-1 sampler is used.

    ``lin-smp``: each ``phi`` is a cut draw with probability ``gamma`` and an
    exact-posterior draw with probability ``1 - gamma`` (so ``gamma = 1`` is
    the cut posterior), followed by ``zeta | Y, phi``.
    """
    if cfg is None:
        raise ContractError("smp_posterior needs an SmpConfig")
    stream = as_stream(rng)
    inner_cfg = MhConfig(cfg.inner_iters)
    I = cfg.I
    if isinstance(model, RandomEffectsModel):
        model.check_groups()
        if cfg.mode == "power-smp":
            if cfg.gamma == 0.0:
                raw = _re_stage1(model, mh or _default_outer(I), stream.child(0))
                u = _last(raw, I)
            else:
                mh = mh or MhConfig(max(20000, 200 * (model.N + 1)) + I * 10, thin=10)

                def target(x):
                    return model.log_power(x, cfg.gamma)

                x0 = np.concatenate([[np.log(max(np.var(model.zbar), 1e-3))], model.mode_log_cut()])
                x0, cov = _auto_cov(mh, target, x0)
                raw = rw_metropolis(target, x0, mh.with_cov(cov), stream.child(0))
                u = _last(raw, I)[:, 1:]
            phi2 = np.exp(u)
            config = dict(raw.config, gamma=cfg.gamma, mode=cfg.mode, I=I)
            acc = raw.acceptance_rate
        else:
            cut = _re_stage1(model, mh or _default_outer(I), stream.child(0))
            exact_cfg = MhConfig(max(20000, 200 * (model.N + 1)) + 10 * I, thin=10)
            exact = _re_exact_phi(model, exact_cfg, stream.child(2))
            pick_cut = stream.child(3).generator().random(I) < cfg.gamma
            phi2 = np.where(pick_cut[:, None], np.exp(_last(cut, I)), np.exp(_last(exact, I)[:, 1:]))
            config = {"gamma": cfg.gamma, "mode": cfg.mode, "I": I, "cut_draws": int(pick_cut.sum())}
            acc = float("nan")
        lt = np.full(I, np.nan)
        seed = (stream.master_seed, stream.path)
        if zeta_sampler == "none":
            return _re_chain(model, phi2, None, None, lt, acc, config, seed)
        psi2, beta = _re_zeta(model, phi2, zeta_sampler, inner_cfg, stream.child(1))
        return _re_chain(model, phi2, psi2, beta, lt, acc, config, seed)

    X, Y = _unpack(data)
    if init is None or mh is None:
        raise ContractError("generic smp_posterior needs init=(zeta0, phi0) and an MhConfig")
    zeta0, phi0 = (np.atleast_1d(np.asarray(v, float)) for v in init)
    if cfg.mode == "power-smp":

        def target(x):
            zt, p = model.split(x)
            return float(
                model.logf1(X, p)
                + cfg.gamma * model.logf2(Y, zt, p)
                + model.logprior_phi(p)
                + model.logprior_zeta_given_phi(zt, p)
            )

        x0, cov = _auto_cov(mh, target, np.concatenate([zeta0, phi0]))
        raw = rw_metropolis(target, x0, mh.with_cov(cov), stream.child(0))
        phis = _last(raw, I)[:, model.zeta_dim :]
        config = dict(raw.config, gamma=cfg.gamma, mode=cfg.mode, I=I)
    else:
        cut = cut_posterior(model, data, I, inner_cfg, stream.child(4), mh, init)
        ex = exact_posterior(model, data, mh, stream.child(2), init)
        pick_cut = stream.child(3).generator().random(I) < cfg.gamma
        phi_cut = cut.draws[:, model.zeta_dim :]
        phi_ex = _last(ex, I)[:, model.zeta_dim :]
        if phi_cut.shape[0] < I:
            raise ContractError("cut stage produced fewer than I draws")
        phis = np.where(pick_cut[:, None], phi_cut, phi_ex)
        config = {"gamma": cfg.gamma, "mode": cfg.mode, "I": I, "cut_draws": int(pick_cut.sum())}
    kept, failures = _generic_inner(model, Y, phis, inner_cfg, stream.child(1), zeta0)
    return _assemble_generic(model, phis, kept, failures, config, (stream.master_seed, stream.path))


@dataclass(frozen=True)
class CutDiagnostic:
    T: float
    names: tuple
    mean_exact: np.ndarray
    mean_cut: np.ndarray
    sd_exact: np.ndarray
    sd_cut: np.ndarray

    def rows(self):
        for j, n in enumerate(self.names):
            yield {
                "parameter": n,
                "mean_exact": self.mean_exact[j],
                "mean_cut": self.mean_cut[j],
                "mean_shift": self.mean_exact[j] - self.mean_cut[j],
                "sd_exact": self.sd_exact[j],
                "sd_cut": self.sd_cut[j],
                "sd_ratio": self.sd_exact[j] / self.sd_cut[j],
            }


def cut_diagnostic(model=None, data=None, rng=0, exact: Optional[Chain] = None, cut: Optional[Chain] = None,
                   mh: Optional[MhConfig] = None, I: int = 4000) -> CutDiagnostic:
    """``T = KL(pi(phi|X,Y) || pi_cut(phi|X))`` from moment-matched Gaussians.

    Chains may be passed in; missing ones are computed. For the
    random-effects model the comparison is made on ``log phi^2``, where both
    posteriors are close to Gaussian.
    """
    stream = as_stream(rng)
    if isinstance(model, RandomEffectsModel):
        names = model.phi_names
        if exact is None:
            exact = exact_posterior(model, mh=mh, rng=stream.child(0))
        if cut is None:
            cut = re_cut_exact_sampler(model, I, stream.child(1), zeta=False)
        P = np.log(exact.select(names).draws)
        Q = np.log(cut.select(names).draws)
        names = tuple(f"log_{n}" for n in names)
    else:
        if exact is None or cut is None:
            if model is None:
                raise ContractError("cut_diagnostic needs a model or both chains")
            raise ContractError("generic models need precomputed exact and cut chains")
        names = tuple(model.phi_names) if model is not None else tuple(n for n in exact.names if n in cut.names)
        P = exact.select(names).draws
        Q = cut.select(names).draws
    T = kl_gauss_moment(P, Q)
    return CutDiagnostic(T, names, P.mean(axis=0), Q.mean(axis=0), P.std(axis=0, ddof=1), Q.std(axis=0, ddof=1))
