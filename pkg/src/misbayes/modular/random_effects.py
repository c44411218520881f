"""Normal random-effects testbed with closed-form cut posterior.

Model: ``Z_ij ~ N(beta_i, phi_i^2)``, ``beta_i ~ N(0, psi^2)``. Module one is
the within-group sums of squares ``s2`` (depends on ``phi`` only), module two
the group means ``zbar`` (depends on ``beta``, ``psi`` and ``phi``). Priors:
``pi(phi_i^2) ∝ 1/phi_i^2`` and ``pi(psi^2 | phi) ∝ 1/(psi^2 + mean(phi^2)/J)``.

Samplers work on log-variances: ``v = log psi^2`` and ``u_i = log phi_i^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DegeneracyError

LOG_PSI2_BOUNDS = (np.log(1e-6), np.log(1e6))
GRID_NODES = 2048
COARSE_NODES = 256


def sufficient_stats(Z):
    """Group means and within-group centered sums of squares of an N x J matrix."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    zbar = Z.mean(axis=1)
    s2 = np.sum((Z - zbar[:, None]) ** 2, axis=1)
    return zbar, s2


@dataclass(frozen=True)
class RandomEffectsModel:
    """Sufficient statistics of the random-effects data plus likelihood options.

    ``factor_j=True`` uses ``exp(-J s2 / (2 phi^2))`` in the module-one term
    instead of the Gamma likelihood's ``exp(-s2 / (2 phi^2))``.
    """

    N: int
    J: int
    zbar: np.ndarray
    s2: np.ndarray
    factor_j: bool = False

    def __post_init__(self):
        zbar = np.atleast_1d(np.asarray(self.zbar, dtype=float))
        s2 = np.atleast_1d(np.asarray(self.s2, dtype=float))
        if self.J < 2:
            raise ContractError("random-effects model needs J >= 2")
        if zbar.size != self.N or s2.size != self.N:
            raise ContractError("zbar and s2 must have length N")
        if np.any(s2 < 0) or not np.isfinite(s2).all() or not np.isfinite(zbar).all():
            raise ContractError("s2 must be finite and nonnegative")
        object.__setattr__(self, "zbar", zbar)
        object.__setattr__(self, "s2", s2)

    @classmethod
    def from_data(cls, Z, factor_j: bool = False) -> "RandomEffectsModel":
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        zbar, s2 = sufficient_stats(Z)
        return cls(Z.shape[0], Z.shape[1], zbar, s2, factor_j)

    def with_zbar(self, zbar) -> "RandomEffectsModel":
        return RandomEffectsModel(self.N, self.J, zbar, self.s2, self.factor_j)

    @property
    def s_eff(self) -> np.ndarray:
        return self.s2 * self.J if self.factor_j else self.s2

    def check_groups(self):
        bad = np.flatnonzero(self.s2 <= 0)
        if bad.size:
            raise DegeneracyError(f"groups {bad.tolist()} have zero within-group spread (s2 = 0)")

    @property
    def names(self) -> tuple[str, ...]:
        return ("psi2",) + tuple(f"beta_{i + 1}" for i in range(self.N)) + tuple(
            f"phi2_{i + 1}" for i in range(self.N)
        )

    @property
    def phi_names(self) -> tuple[str, ...]:
        return tuple(f"phi2_{i + 1}" for i in range(self.N))

    # ---- module one -----------------------------------------------------
    def cut_shape_scale(self):
        """Inverse-gamma parameters of the cut posterior of each ``phi_i^2``."""
        return (self.J - 1) / 2.0, self.s_eff / 2.0

    def cut_mean_phi2(self) -> np.ndarray:
        if self.J <= 3:
            raise ContractError("cut posterior mean of phi^2 is finite only for J > 3")
        a, b = self.cut_shape_scale()
        return b / (a - 1.0)

    def log_cut(self, u) -> float:
        """Cut posterior of ``phi^2`` on the log scale (Jacobian included)."""
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            return float(np.sum(-(self.J - 1) / 2.0 * u - self.s_eff / (2.0 * np.exp(u))))

    # ---- exact marginal -------------------------------------------------
    def log_exact(self, x) -> float:
        """Marginal posterior of ``(psi^2, phi^2)`` on ``(v, u)`` (Jacobian included)."""
        x = np.asarray(x, dtype=float)
        v, u = x[0], x[1:]
        J = self.J
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            a = np.exp(v)
            p = np.exp(u)
            D = a + p.mean() / J
            c = a + p / J
            val = (
                -np.log(D)
                + np.sum(-(J + 1) / 2.0 * u - self.s_eff / (2.0 * p) - 0.5 * np.log(c) - self.zbar**2 / (2.0 * c))
                + v
                + u.sum()
            )
        return float(val) if np.isfinite(val) else float("-inf")

    def grad_log_exact(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v, u = x[0], x[1:]
        J, N = self.J, self.N
        a = np.exp(v)
        p = np.exp(u)
        D = a + p.mean() / J
        c = a + p / J
        q = -0.5 / c + self.zbar**2 / (2.0 * c**2)
        g = np.empty_like(x)
        g[0] = -a / D + a * q.sum() + 1.0
        g[1:] = -(p / (N * J)) / D - (J + 1) / 2.0 + self.s_eff / (2.0 * p) + (p / J) * q + 1.0
        return g

    # ---- power posterior with the auxiliary random-effect block integrated out
    def log_power(self, x, gamma: float) -> float:
        """Powered target on ``(log psi_tilde^2, u)`` with ``beta_tilde`` integrated out.

        Uses ``N(x; b, s)^g = (2 pi s)^((1-g)/2) g^(-1/2) N(x; b, s/g)``. At
        ``gamma = 1`` this equals :meth:`log_exact` up to a constant.
        """
        if not 0 < gamma <= 1:
            raise ContractError("collapsed power target needs 0 < gamma <= 1")
        x = np.asarray(x, dtype=float)
        v, u = x[0], x[1:]
        J = self.J
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            a = np.exp(v)
            p = np.exp(u)
            s = p / J
            cg = s / gamma + a
            val = (
                -np.log(a + p.mean() / J)
                + np.sum(-(J + 1) / 2.0 * u - self.s_eff / (2.0 * p))
                + np.sum(0.5 * (1.0 - gamma) * np.log(2 * np.pi * s) - 0.5 * np.log(2 * np.pi * cg) - self.zbar**2 / (2.0 * cg))
                - 0.5 * self.N * np.log(gamma)
                + v
                + u.sum()
            )
        return float(val) if np.isfinite(val) else float("-inf")

    # ---- module-two conditionals given phi ------------------------------
    def log_psi2_conditional(self, t, phi2) -> np.ndarray:
        """Unnormalized ``log pi(t | zbar, phi)`` for ``t = log psi^2`` (vectorized in ``t``)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        phi2 = np.asarray(phi2, dtype=float)
        with np.errstate(over="ignore"):
            a = np.exp(t)[:, None]
        c = a + phi2[None, :] / self.J
        return -np.log(a[:, 0] + phi2.mean() / self.J) + np.sum(-0.5 * np.log(c) - self.zbar**2 / (2.0 * c), axis=1) + t

    def beta_conditional(self, psi2, phi2):
        """Mean and variance of ``beta_i | zbar_i, psi^2, phi_i^2``."""
        prec_data = self.J / np.asarray(phi2, dtype=float)
        prec = prec_data + 1.0 / psi2
        omega = prec_data / prec
        return omega * self.zbar, 1.0 / prec

    def mode_log_cut(self) -> np.ndarray:
        self.check_groups()
        return np.log(self.s_eff / (self.J - 1))


def _log_psi2_rows(model: RandomEffectsModel, t, phi2):
    """``log pi(t | zbar, phi)`` for a batch: ``t`` is (B, K), ``phi2`` is (B, N)."""
    with np.errstate(over="ignore"):
        a = np.exp(t)
    c = a[:, :, None] + phi2[:, None, :] / model.J
    pbar = phi2.mean(axis=1)[:, None] / model.J
    return -np.log(a + pbar) + np.sum(-0.5 * np.log(c) - model.zbar**2 / (2.0 * c), axis=2) + t


def sample_log_psi2_grid(model: RandomEffectsModel, phi2, u01, nodes: int = GRID_NODES, block: int = 32):
    """Inverse-CDF draws of ``log psi^2`` given rows of ``phi^2`` on an adaptive grid.

    A coarse pass over ``[1e-6, 1e6]`` locates the mass; a ``nodes``-point
    grid is then built over the region within 40 nats of the maximum, and the
    CDF is the trapezoid rule on that grid. Scalar ``u01`` with 1-d ``phi2`` returns a
    float; otherwise one draw per row.
    """
    phi2 = np.asarray(phi2, dtype=float)
    scalar = phi2.ndim == 1
    phi2 = np.atleast_2d(phi2)
    u01 = np.atleast_1d(np.asarray(u01, dtype=float))
    lo, hi = LOG_PSI2_BOUNDS
    base = np.linspace(0.0, 1.0, nodes)
    coarse = np.linspace(lo, hi, COARSE_NODES)
    out = np.empty(phi2.shape[0])
    for s in range(0, phi2.shape[0], block):
        P = phi2[s : s + block]
        B = P.shape[0]
        tc = np.broadcast_to(coarse, (B, COARSE_NODES))
        lp = _log_psi2_rows(model, tc, P)
        mask = lp > lp.max(axis=1, keepdims=True) - 40.0
        first = np.maximum(mask.argmax(axis=1) - 1, 0)
        last = np.minimum(COARSE_NODES - mask[:, ::-1].argmax(axis=1), COARSE_NODES - 1)
        a = coarse[first][:, None]
        b = coarse[last][:, None]
        t = a + (b - a) * base
        lp = _log_psi2_rows(model, t, P)
        w = np.exp(lp - lp.max(axis=1, keepdims=True))
        cdf = np.concatenate([np.zeros((B, 1)), np.cumsum(0.5 * (w[:, 1:] + w[:, :-1]) * np.diff(t, axis=1), axis=1)], axis=1)
        cdf /= cdf[:, -1:]
        u = u01[s : s + B]
        k = np.clip((cdf < u[:, None]).sum(axis=1), 1, nodes - 1)
        rows = np.arange(B)
        c0, c1 = cdf[rows, k - 1], cdf[rows, k]
        frac = np.where(c1 > c0, (u - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0)
        out[s : s + B] = t[rows, k - 1] + frac * (t[rows, k] - t[rows, k - 1])
    return float(out[0]) if scalar and out.size == 1 else out


def simulate(N: int, J: int, phi2, psi2: float, gen: np.random.Generator, beta1=None):
    """Simulate an ``N x J`` data matrix; ``beta1`` overrides the first random effect."""
    phi2 = np.broadcast_to(np.asarray(phi2, dtype=float), (N,))
    beta = np.sqrt(psi2) * gen.standard_normal(N)
    if beta1 is not None:
        beta[0] = beta1
    Z = beta[:, None] + np.sqrt(phi2)[:, None] * gen.standard_normal((N, J))
    return Z, beta
