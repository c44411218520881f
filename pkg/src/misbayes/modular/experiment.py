"""Repeated-sampling comparison of cut, exact and semi-modular posteriors."""
from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ContractError, MisbayesError
from ..mcmc import MhConfig
from ..rng import as_stream
from .core import SmpConfig, exact_posterior, re_cut_exact_sampler, smp_posterior
from .random_effects import RandomEffectsModel, simulate

log = logging.getLogger(__name__)

METHODS = ("exact", "cut", "smp", "lin-smp")


@dataclass(frozen=True)
class ExperimentSpec:
    R: int = 100
    N: int = 100
    J: int = 10
    phi2: float = 0.5
    psi2: float = 2.0
    beta1: float | None = 10.0
    gammas: tuple = (0.25, 0.5, 0.75)
    exact_iterations: int = 20000
    exact_thin: int = 10
    cut_draws: int = 4000
    factor_j: bool = False

    def __post_init__(self):
        if self.R < 1:
            raise ContractError("R must be >= 1")
        if self.N < 1 or self.J < 2:
            raise ContractError("need N >= 1 and J >= 2")
        if not (self.phi2 > 0 and self.psi2 > 0):
            raise ContractError("phi2 and psi2 must be positive")
        if any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ContractError("every gamma must lie in [0, 1]")
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))

    @property
    def true_phi1(self) -> float:
        return float(np.sqrt(self.phi2))


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    methods: tuple
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def values(self, method: str, gamma=None) -> np.ndarray:
        return np.array(
            [r["posterior_mean_phi1"] for r in self.rows if r["method"] == method and (gamma is None or r["gamma"] == gamma)]
        )

    def summary(self) -> list:
        """Quartiles of the posterior means of ``phi_1`` per (method, gamma)."""
        keys = []
        for r in self.rows:
            k = (r["method"], r["gamma"])
            if k not in keys:
                keys.append(k)
        out = []
        for method, gamma in keys:
            v = np.array([r["posterior_mean_phi1"] for r in self.rows if r["method"] == method and r["gamma"] == gamma])
            q1, q2, q3 = np.quantile(v, [0.25, 0.5, 0.75])
            err = np.abs(v - self.spec.true_phi1)
            out.append(
                {"method": method, "gamma": gamma, "n": v.size, "q25": q1, "median": q2, "q75": q3,
                 "mean": v.mean(), "mean_abs_error": err.mean()}
            )
        return out

    def write(self, outdir) -> list:
        os.makedirs(outdir, exist_ok=True)
        paths = []
        p = os.path.join(outdir, "experiment.csv")
        cols = ["replicate", "method", "gamma", "posterior_mean_phi1", "abs_error"]
        _write_rows(p, cols, self.rows)
        paths.append(p)
        p = os.path.join(outdir, "summary.csv")
        _write_rows(p, ["method", "gamma", "n", "q25", "median", "q75", "mean", "mean_abs_error"], self.summary())
        paths.append(p)
        if self.failures:
            p = os.path.join(outdir, "failures.csv")
            _write_rows(p, ["replicate", "method", "gamma", "error"], self.failures)
            paths.append(p)
        return paths


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, cols, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _phi1_mean(chain) -> float:
    return float(np.mean(np.sqrt(chain.column("phi2_1"))))


def _run_replicate(args):
    spec, methods, stream, r = args
    gen = stream.child(r, 0).generator()
    Z, _ = simulate(spec.N, spec.J, spec.phi2, spec.psi2, gen, beta1=spec.beta1)
    model = RandomEffectsModel.from_data(Z, factor_j=spec.factor_j)
    truth = spec.true_phi1
    rows, failures = [], []

    def record(method, gamma, fn):
        try:
            m = fn()
        except MisbayesError as exc:
            failures.append({"replicate": r, "method": method, "gamma": gamma, "error": str(exc)})
            return None
        rows.append({"replicate": r, "method": method, "gamma": gamma, "posterior_mean_phi1": m, "abs_error": abs(m - truth)})
        return m

    needs_exact = "exact" in methods or "lin-smp" in methods
    needs_cut = "cut" in methods or "lin-smp" in methods
    mh = MhConfig(spec.exact_iterations, thin=spec.exact_thin)
    m_exact = m_cut = None
    if needs_exact:
        m_exact = record("exact", None, lambda: _phi1_mean(exact_posterior(model, mh=mh, rng=stream.child(r, 1))))
    if needs_cut:
        m_cut = record("cut", None, lambda: _phi1_mean(re_cut_exact_sampler(model, spec.cut_draws, stream.child(r, 2), zeta=False)))
    if "smp" in methods:
        for k, g in enumerate(spec.gammas):
            cfg = SmpConfig(g, "power-smp", I=spec.exact_iterations // spec.exact_thin)
            smp_mh = MhConfig(spec.exact_iterations, thin=spec.exact_thin) if g > 0 else None
            record("smp", g, lambda: _phi1_mean(smp_posterior(model, cfg=cfg, mh=smp_mh, rng=stream.child(r, 3, k), zeta_sampler="none")))
    if "lin-smp" in methods and m_exact is not None and m_cut is not None:
        # a mixture's mean is the gamma-weighted mean of its components
        for g in spec.gammas:
            record("lin-smp", g, lambda: g * m_cut + (1.0 - g) * m_exact)
    # rows for exact/cut exist only when requested
    rows = [x for x in rows if x["method"] in methods]
    failures = [x for x in failures if x["method"] in methods]
    return r, rows, failures


def repeated_sampling_experiment(spec: ExperimentSpec, methods=("exact", "cut"), rng=0, workers: int = 1) -> ExperimentResult:
    """Simulate ``spec.R`` datasets and record posterior means of ``phi_1`` per method.

    Replicate ``r`` simulates on stream ``(r, 0)`` and runs its samplers on
    sibling streams, so results do not depend on ``workers``. Failures are
    recorded and the experiment continues.
    """
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ContractError(f"unknown methods {bad}; choose from {METHODS}")
    stream = as_stream(rng)
    tasks = [(spec, methods, stream, r) for r in range(spec.R)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate, tasks))
    else:
        results = [_run_replicate(t) for t in tasks]
    results.sort(key=lambda t: t[0])
    out = ExperimentResult(spec, methods)
    for _, rows, failures in results:
        out.rows.extend(rows)
        out.failures.extend(failures)
    if out.failures:
        log.warning("%d replicate/method runs failed", len(out.failures))
    return out


def spec_echo(spec: ExperimentSpec) -> dict:
    return asdict(spec)
