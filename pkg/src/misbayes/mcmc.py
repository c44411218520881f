"""Random-walk Metropolis-Hastings and chain post-processing."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dists import check_spd
from .errors import ContractError, InitializationError
from .rng import as_stream

OPTIMAL_RW_SCALE = 2.38

_BLOCK = 4096


@dataclass(frozen=True)
class MhConfig:
    """Random-walk MH settings.

    ``proposal_cov`` may be ``None`` only for samplers that tune their own
    proposal from a Laplace approximation (documented where supported).
    """

    iterations: int
    proposal_cov: Optional[np.ndarray] = None
    thin: int = 1
    burn_in: int = 0
    seed_path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")
        if self.thin < 1:
            raise ContractError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ContractError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.proposal_cov is not None:
            cov = np.atleast_2d(np.asarray(self.proposal_cov, dtype=float))
            object.__setattr__(self, "proposal_cov", cov)

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def with_cov(self, cov) -> "MhConfig":
        return MhConfig(self.iterations, cov, self.thin, self.burn_in, self.seed_path)

    def echo(self) -> dict:
        return {
            "iterations": self.iterations,
            "thin": self.thin,
            "burn_in": self.burn_in,
            "seed_path": list(self.seed_path),
        }


def scaled_proposal(scale_matrix) -> np.ndarray:
    """Default proposal covariance ``2.38^2 / d * scale_matrix``."""
    S = np.atleast_2d(np.asarray(scale_matrix, dtype=float))
    return OPTIMAL_RW_SCALE**2 / S.shape[0] * S


@dataclass(frozen=True)
class Chain:
    draws: np.ndarray
    log_target: np.ndarray
    acceptance_rate: float = float("nan")
    names: tuple[str, ...] = ()
    config: dict = field(default_factory=dict)
    seed: Optional[tuple] = None

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        lt = np.asarray(self.log_target, dtype=float).reshape(-1)
        if lt.size != draws.shape[0]:
            raise ContractError("log_target length must equal number of draws")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(draws.shape[1]))
        if len(names) != draws.shape[1]:
            raise ContractError("names do not match draw dimension")
        draws.setflags(write=False)
        lt.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "log_target", lt)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_array(cls, draws, names: Sequence[str] = ()) -> "Chain":
        draws = np.asarray(draws, dtype=float)
        n = draws.shape[0]
        return cls(draws, np.full(n, np.nan), float("nan"), tuple(names))

    def __len__(self):
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]

    def select(self, names: Sequence[str]) -> "Chain":
        idx = [self.names.index(n) for n in names]
        return Chain(self.draws[:, idx], self.log_target, self.acceptance_rate, tuple(names), self.config, self.seed)

    def to_csv(self, path) -> None:
        write_chain_csv(self, path)


def write_chain_csv(chain: Chain, path) -> None:
    """One row per stored draw; columns are parameter names then log_target."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(chain.names) + ["log_target"])
        for row, lt in zip(chain.draws, chain.log_target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(lt))])


def read_chain_csv(path) -> Chain:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty chain file")
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    if header[-1] == "log_target":
        return Chain(data[:, :-1], data[:, -1], names=tuple(header[:-1]))
    return Chain(data, np.full(data.shape[0], np.nan), names=tuple(header))


def rw_metropolis(
    log_target: Callable[[np.ndarray], float],
    init,
    cfg: MhConfig,
    rng,
    names: Sequence[str] = (),
) -> Chain:
    """Multivariate-normal random-walk Metropolis-Hastings.

    Parameters
    ----------
    log_target : callable
        Unnormalized log density of the target. Non-finite values at a
        proposal reject it.
    init : array_like
        Starting point; ``log_target(init)`` must be finite.
    cfg : MhConfig
        Iterations, proposal covariance, thinning and burn-in. Draws from
        iterations ``burn_in+thin, burn_in+2*thin, ...`` are stored.
    rng : RngStream
        The chain uses the child stream ``rng.child(*cfg.seed_path)``.

    Returns
    -------
    Chain
    """
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    d = x.size
    if cfg.proposal_cov is None:
        raise ContractError("rw_metropolis needs an explicit proposal_cov")
    cov = cfg.proposal_cov
    if cov.shape != (d, d):
        raise ContractError(f"proposal_cov is {cov.shape}, parameter dimension is {d}")
    w, V = check_spd(cov, "proposal_cov")
    L = V * np.sqrt(w)

    lp = float(log_target(x))
    if not np.isfinite(lp):
        raise InitializationError(f"log_target is not finite at the initial point ({lp})")

    stream = as_stream(rng).child(*cfg.seed_path)
    gen = stream.generator()
    n_keep = cfg.n_stored
    draws = np.empty((n_keep, d))
    lts = np.empty(n_keep)
    accepted = 0
    k = 0
    it = 0
    while it < cfg.iterations:
        b = min(_BLOCK, cfg.iterations - it)
        steps = gen.standard_normal((b, d)) @ L.T
        logu = np.log(gen.random(b))
        for j in range(b):
            it += 1
            prop = x + steps[j]
            lp_prop = log_target(prop)
            if lp_prop - lp > logu[j] and np.isfinite(lp_prop):
                x = prop
                lp = float(lp_prop)
                accepted += 1
            if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0 and k < n_keep:
                draws[k] = x
                lts[k] = lp
                k += 1
    return Chain(
        draws,
        lts,
        accepted / cfg.iterations,
        tuple(names),
        cfg.echo(),
        (stream.master_seed, stream.path),
    )


@dataclass(frozen=True)
class ChainSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    median: np.ndarray
    ess: np.ndarray

    def rows(self):
        for j, n in enumerate(self.names):
            yield {
                "parameter": n,
                "mean": self.mean[j],
                "sd": self.sd[j],
                "q025": self.lower[j],
                "median": self.median[j],
                "q975": self.upper[j],
                "ess": self.ess[j],
            }


def effective_sample_size(x) -> float:
    """ESS by Geyer's initial monotone positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    if not np.any(xc):
        return float("nan")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    rho = acov / acov[0]
    npairs = n // 2
    pairs = rho[: 2 * npairs : 2] + rho[1 : 2 * npairs : 2]
    tau = 0.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        tau += g
        prev = g
    tau = -1.0 + 2.0 * tau
    return float(n / max(tau, 1.0 / n))


def summarize(chain) -> ChainSummary:
    """Per-coordinate mean, sd, central 95% interval, median and ESS."""
    if isinstance(chain, Chain):
        X, names = chain.draws, chain.names
    else:
        X = np.asarray(chain, dtype=float)
        X = X[:, None] if X.ndim == 1 else X
        names = tuple(f"x{j}" for j in range(X.shape[1]))
    if X.shape[0] == 0:
        raise ContractError("cannot summarize an empty chain")
    if X.shape[0] < 10:
        raise ContractError("summarize needs at least 10 draws")
    q = np.quantile(X, [0.025, 0.5, 0.975], axis=0, method="linear")
    return ChainSummary(
        tuple(names),
        X.mean(axis=0),
        X.std(axis=0, ddof=1),
        q[0],
        q[2],
        q[1],
        np.array([effective_sample_size(X[:, j]) for j in range(X.shape[1])]),
    )


def gaussian_kl(mean_p, cov_p, mean_q, cov_q) -> float:
    """KL(N_p || N_q) in closed form."""
    mean_p = np.atleast_1d(mean_p)
    mean_q = np.atleast_1d(mean_q)
    cov_p = np.atleast_2d(cov_p)
    cov_q = np.atleast_2d(cov_q)
    d = mean_p.size
    check_spd(cov_p, "first fitted covariance")
    check_spd(cov_q, "second fitted covariance")
    Lq = np.linalg.cholesky(cov_q)
    Lp = np.linalg.cholesky(cov_p)
    A = np.linalg.solve(Lq, Lp)
    diff = np.linalg.solve(Lq, mean_q - mean_p)
    logdet_q = 2.0 * np.log(np.diag(Lq)).sum()
    logdet_p = 2.0 * np.log(np.diag(Lp)).sum()
    kl = 0.5 * (np.sum(A * A) + diff @ diff - d + logdet_q - logdet_p)
    return float(max(kl, 0.0))


def kl_gauss_moment(chain_p, chain_q) -> float:
    """KL divergence between Gaussians moment-matched to two sample sets."""
    P = chain_p.draws if isinstance(chain_p, Chain) else np.asarray(chain_p, float)
    Q = chain_q.draws if isinstance(chain_q, Chain) else np.asarray(chain_q, float)
    P = P[:, None] if P.ndim == 1 else P
    Q = Q[:, None] if Q.ndim == 1 else Q
    if P.shape[1] != Q.shape[1]:
        raise ContractError("chains differ in dimension")
    d = P.shape[1]
    if min(P.shape[0], Q.shape[0]) < 10 * d:
        raise ContractError(f"need at least {10 * d} draws per chain")
    mp, mq = P.mean(axis=0), Q.mean(axis=0)
    cp = np.atleast_2d(np.cov(P, rowvar=False))
    cq = np.atleast_2d(np.cov(Q, rowvar=False))
    if np.array_equal(P, Q):
        return 0.0
    return gaussian_kl(mp, cp, mq, cq)


__all__ = [
    "MhConfig",
    "Chain",
    "ChainSummary",
    "rw_metropolis",
    "scaled_proposal",
    "summarize",
    "effective_sample_size",
    "kl_gauss_moment",
    "gaussian_kl",
    "write_chain_csv",
    "read_chain_csv",
]
