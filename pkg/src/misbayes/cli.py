"""Command-line front end.

``misbayes <command> --config run.ini [--seed N] [--workers N] [--output DIR]``

Each run stages its files in a scratch directory and moves them into the
output directory only on success, so a failed run leaves nothing behind.
Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 numerical
degeneracy, 1 anything else. Failures print a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile

import numpy as np

from . import __version__, glm
from .config import COMMANDS, RunConfig, load_config, parse_submodels
from .dists import DistSpec, logpdf
from .errors import (
    ConfigError,
    ContractError,
    ConvergenceError,
    DataError,
    DegeneracyError,
    DesignError,
    InitializationError,
    ParameterDomainError,
)
from .io import Roles, ingest_csv, write_rows
from .mcmc import Chain, MhConfig, rw_metropolis, scaled_proposal, summarize
from .models import build_model
from .modular import (
    ExperimentSpec,
    RandomEffectsModel,
    SmpConfig,
    cut_diagnostic,
    cut_posterior,
    exact_posterior,
    re_cut_exact_sampler,
    repeated_sampling_experiment,
    smp_posterior,
)
from .modular.random_effects import simulate as simulate_random_effects
from .plots import emit_plots
from .projection import (
    ReferencePosterior,
    SubmodelSpec,
    clustered_projection,
    glm_bayesian_bootstrap,
    point_projection,
    project_posterior,
    relative_loss,
    select_submodel,
)
from .restricted import (
    AbcConfig,
    BslConfig,
    abc_loglik,
    brsl_posterior,
    pilot_covariance,
    q_posterior_logpdf,
)
from .rng import RngStream

log = logging.getLogger(__name__)

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_DEGENERACY = 0, 1, 2, 3, 4
MAX_PLOTTED = 6


# ---------------------------------------------------------------------------
# shared pieces


def _mh(cfg: RunConfig, cov=None) -> MhConfig:
    m = cfg["mcmc"]
    return MhConfig(m["iterations"], cov, thin=m["thin"], burn_in=m["burn_in"])


def _write_chain(chain: Chain, outdir, prefix=""):
    chain.to_csv(os.path.join(outdir, f"{prefix}chain.csv"))
    rows = list(summarize(chain).rows())
    write_rows(os.path.join(outdir, f"{prefix}summary.csv"), ["parameter", "mean", "sd", "q025", "median", "q975", "ess"], rows)


def _plot(cfg: RunConfig, results: dict, outdir, kind="density-overlay", prefix="", reference=None):
    if cfg["run"]["plots"] and results:
        emit_plots(results, kind, outdir, prefix=prefix, reference=reference)


def _chain_plots(cfg, chains: dict, outdir, names=None):
    first = next(iter(chains.values()))
    names = list(names or first.names)[:MAX_PLOTTED]
    _plot(cfg, {n: {k: c.column(n) for k, c in chains.items()} for n in names}, outdir)


def _family(cfg: RunConfig) -> glm.GlmFamily:
    m = cfg["model"]
    try:
        return glm.GlmFamily(m["family"], m["dispersion"])
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def _require_path(cfg: RunConfig):
    path = cfg["data"]["path"]
    if not path:
        raise ConfigError(f"{cfg.command} needs [data] path")
    return path


def _glm_data(cfg: RunConfig) -> glm.GlmData:
    d = cfg["data"]
    if d["kind"] != "glm":
        raise ConfigError(f"{cfg.command} needs [data] kind = glm")
    return ingest_csv(_require_path(cfg), Roles("glm", d["response"], d["trials"], d["covariates"], d["intercept"]))


def _normal_prior(p: int, var: float) -> DistSpec:
    return DistSpec.mvnormal(np.zeros(p), var * np.eye(p))


def _glm_exact_chain(cfg: RunConfig, family, data, stream: RngStream) -> Chain:
    """Random-walk MH on the GLM posterior under an isotropic normal prior."""
    var = cfg["model"]["prior_var"]
    fit = glm.irls_mle(family, data)
    cov = cfg["mcmc"]["proposal_scale"] ** 2 * scaled_proposal(fit.cov)

    def target(b):
        return glm.loglik(family, data, b) - 0.5 * float(b @ b) / var

    return rw_metropolis(target, fit.coef, _mh(cfg, cov), stream, names=data.column_names)


def _random_effects(cfg: RunConfig, stream: RngStream, outdir) -> RandomEffectsModel:
    factor_j = cfg["modular"]["factor_j"]
    path = cfg["data"]["path"]
    if path:
        if cfg["data"]["kind"] != "matrix":
            raise ConfigError("random-effects data need [data] kind = matrix")
        Z = ingest_csv(path, Roles("matrix"))
    else:
        s = cfg["simulate"]
        Z, _ = simulate_random_effects(s["N"], s["J"], s["phi2"], s["psi2"], stream.generator(), beta1=s["beta1"])
        write_rows(os.path.join(outdir, "data.csv"), [f"z{j + 1}" for j in range(Z.shape[1])],
                   [{f"z{j + 1}": float(v) for j, v in enumerate(row)} for row in Z])
    if Z.shape[1] < 2:
        raise DataError("random-effects data need at least two columns", code="invariant")
    model = RandomEffectsModel.from_data(Z, factor_j=factor_j)
    model.check_groups()
    return model


# ---------------------------------------------------------------------------
# restricted-likelihood helpers


class _Restricted:
    """Observed summary, point estimate and its covariance for a generative model."""

    def __init__(self, cfg: RunConfig, stream: RngStream, bsl_m=None):
        m = cfg["model"]
        name = m["name"]
        if name == "random-effects":
            raise ConfigError("restricted-likelihood methods support gaussian-toy and glm-binomial")
        self.data = None
        if name == "glm-binomial":
            if m["family"] != "binomial-logit":
                raise ConfigError("glm-binomial needs family = binomial-logit")
            self.data = _glm_data(cfg)
            self.model = build_model(name, m["summary"], self.data, c=m["huber_c"])
        else:
            self.model = build_model(name, m["summary"], n=m["n"], channels=m["channels"], t1=m["censor_t1"], t2=m["censor_t2"])
        d = self.model.summary_dim
        if bsl_m is not None and bsl_m < d + 2:
            raise ConfigError(f"BSL needs m >= d + 2 = {d + 2} for this summary, got m = {bsl_m}")
        if not -1 <= m["shift_index"] < d:
            raise ConfigError(f"shift_index must be -1 or a summary index below {d}")
        if name == "glm-binomial":
            family = glm.GlmFamily("binomial-logit")
            fit = glm.robust_mest(family, self.data, c=m["huber_c"]) if m["summary"] == "robust-mest" else glm.irls_mle(family, self.data)
            self.theta_hat, self.cov = fit.coef, fit.cov
            self.s_obs = np.asarray(self.model.summary(self.data.y), float)
        else:
            if cfg["data"]["path"]:
                if cfg["data"]["kind"] != "matrix":
                    raise ConfigError("gaussian-toy data need [data] kind = matrix")
                X = ingest_csv(cfg["data"]["path"], Roles("matrix"))
                if X.shape != (m["n"], m["channels"]):
                    raise DataError(f"expected a {m['n']} x {m['channels']} matrix, got {X.shape[0]} x {X.shape[1]}",
                                    code="invariant")
            else:
                X = self.model.simulate(np.array([m["theta_true"]]), stream.child(0).generator())
            self.theta_hat = np.array([X.mean()])
            self.cov = np.array([[1.0 / X.size]])
            self.s_obs = np.asarray(self.model.summary(X), float)
        if not np.all(np.isfinite(self.s_obs)):
            raise DegeneracyError("observed summary is not finite")
        if m["shift_index"] >= 0 and m["shift_sd"] != 0.0:
            # shift in units of the summary's sampling sd at the point estimate
            S = self.model.simulate_summaries(self.theta_hat, 500, stream.child(1).generator())
            sd = np.nanstd(S[:, m["shift_index"]], ddof=1)
            self.s_obs = self.s_obs.copy()
            self.s_obs[m["shift_index"]] += m["shift_sd"] * sd
        self.prior = _normal_prior(self.model.theta_dim, m["prior_var"])

    def proposal(self, cfg: RunConfig):
        return cfg["mcmc"]["proposal_scale"] ** 2 * scaled_proposal(self.cov)

    def names(self):
        if self.data is not None:
            return self.data.column_names
        return ("theta",)


def _gamma_check(chain: Chain, cfg: BslConfig):
    qs = np.array([0.25, 0.5, 0.75])
    b = cfg.gamma_prior_scale
    if cfg.variant == "variance-inflate":
        prior_q = -b * np.log1p(-qs)
    else:
        prior_q = b * np.array([-np.log(2.0), 0.0, np.log(2.0)])
    rows = []
    for n in chain.names:
        if not n.startswith("gamma_"):
            continue
        post_q = np.quantile(chain.column(n), qs)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(prior_q != 0, (post_q - prior_q) / np.abs(prior_q), np.nan)
        rows.append({"parameter": n, "prior_q25": prior_q[0], "prior_q50": prior_q[1], "prior_q75": prior_q[2],
                     "post_q25": post_q[0], "post_q50": post_q[1], "post_q75": post_q[2],
                     "max_rel_shift": float(np.nanmax(np.abs(rel)))})
    return rows


GAMMA_COLS = ["parameter", "prior_q25", "prior_q50", "prior_q75", "post_q25", "post_q50", "post_q75", "max_rel_shift"]


def _bsl_run(cfg: RunConfig, stream: RngStream, outdir, variant: str):
    b = cfg["bsl"]
    bcfg = BslConfig(b["m"], variant, b["gamma_prior_scale"])
    r = _Restricted(cfg, stream.child(0), bsl_m=b["m"])
    chain = brsl_posterior(r.model, r.s_obs, r.prior, bcfg, _mh(cfg, r.proposal(cfg)), stream.child(1), r.theta_hat)
    p = r.model.theta_dim
    names = tuple(r.names()) + chain.names[p:]
    chain = Chain(chain.draws, chain.log_target, chain.acceptance_rate, names, chain.config, chain.seed)
    _write_chain(chain, outdir)
    write_rows(os.path.join(outdir, "observed_summary.csv"), ["index", "value"],
               [{"index": i, "value": float(v)} for i, v in enumerate(r.s_obs)])
    if variant != "standard":
        write_rows(os.path.join(outdir, "gamma_check.csv"), GAMMA_COLS, _gamma_check(chain, bcfg))
    _chain_plots(cfg, {variant: chain}, outdir)


# ---------------------------------------------------------------------------
# commands


def cmd_fit_posterior(cfg: RunConfig, stream: RngStream, outdir):
    method = cfg["posterior"]["method"]
    name = cfg["model"]["name"]
    if method == "bsl":
        return _bsl_run(cfg, stream, outdir, "standard")
    if method == "abc":
        a = cfg["abc"]
        r = _Restricted(cfg, stream.child(0))
        pilot = None
        if a["distance"] == "mahalanobis-pilot":
            L = np.linalg.cholesky(4.0 * r.cov)

            def sampler(gen):
                return r.theta_hat + L @ gen.standard_normal(r.theta_hat.size)

            pilot = pilot_covariance(r.model, sampler, a["n_pilot"], stream.child(2))
        acfg = AbcConfig(a["m"], a["eps"], a["kernel"], a["distance"], pilot)
        gen = stream.child(3).generator()
        prior = r.prior

        def target(th):
            return abc_loglik(th, r.s_obs, r.model, acfg, gen) + float(logpdf(prior, th))

        chain = rw_metropolis(target, r.theta_hat, _mh(cfg, r.proposal(cfg)), stream.child(1), names=r.names())
        _write_chain(chain, outdir)
        _chain_plots(cfg, {"abc": chain}, outdir)
        return
    if name == "random-effects":
        model = _random_effects(cfg, stream.child(0), outdir)
        chain = exact_posterior(model, mh=_mh(cfg), rng=stream.child(1))
        _write_chain(chain, outdir)
        _chain_plots(cfg, {"exact": chain}, outdir, names=RE_PLOTTED)
        return
    if name == "gaussian-toy":
        r = _Restricted(cfg, stream.child(0))
        m = cfg["model"]
        nobs = m["n"] * m["channels"]
        xbar = float(r.theta_hat[0])
        var = m["prior_var"]

        def target(th):
            return -0.5 * nobs * (xbar - th[0]) ** 2 - 0.5 * th[0] ** 2 / var

        chain = rw_metropolis(target, r.theta_hat, _mh(cfg, r.proposal(cfg)), stream.child(1), names=("theta",))
    else:
        family, data = _family(cfg), _glm_data(cfg)
        chain = _glm_exact_chain(cfg, family, data, stream.child(1))
    _write_chain(chain, outdir)
    _chain_plots(cfg, {"exact": chain}, outdir)


def cmd_fit_brsl(cfg, stream, outdir):
    _bsl_run(cfg, stream, outdir, cfg["bsl"]["variant"])


def cmd_fit_qposterior(cfg, stream, outdir):
    family, data = _family(cfg), _glm_data(cfg)
    fit = glm.irls_mle(family, data)
    prior = _normal_prior(data.p, cfg["model"]["prior_var"])
    S = glm.sandwich_cov(family, data, fit.coef)
    cov = cfg["mcmc"]["proposal_scale"] ** 2 * scaled_proposal(S)

    def target(th):
        return q_posterior_logpdf(th, data, family, prior)

    chain = rw_metropolis(target, fit.coef, _mh(cfg, cov), stream.child(1), names=data.column_names)
    _write_chain(chain, outdir)
    _chain_plots(cfg, {"q-posterior": chain}, outdir)


RE_PLOTTED = ("psi2", "beta_1", "phi2_1")


def cmd_cut(cfg, stream, outdir):
    mod = cfg["modular"]
    model = _random_effects(cfg, stream.child(0), outdir)
    chain = cut_posterior(model, I=mod["I"], inner_cfg=MhConfig(mod["inner_iters"]), rng=stream.child(1),
                          outer_cfg=_mh(cfg), zeta_sampler=mod["zeta_sampler"])
    _write_chain(chain, outdir)
    names = ("phi2_1",) if mod["zeta_sampler"] == "none" else RE_PLOTTED
    _chain_plots(cfg, {"cut": chain}, outdir, names=names)


def _smp(cfg, stream, outdir, mode):
    mod = cfg["modular"]
    model = _random_effects(cfg, stream.child(0), outdir)
    scfg = SmpConfig(mod["gamma"], mode, mod["inner_iters"], mod["I"])
    chain = smp_posterior(model, cfg=scfg, mh=_mh(cfg), rng=stream.child(1), zeta_sampler=mod["zeta_sampler"])
    _write_chain(chain, outdir)
    names = ("phi2_1",) if mod["zeta_sampler"] == "none" else RE_PLOTTED
    _chain_plots(cfg, {mode: chain}, outdir, names=names)


def cmd_smp(cfg, stream, outdir):
    _smp(cfg, stream, outdir, "power-smp")


def cmd_lin_smp(cfg, stream, outdir):
    _smp(cfg, stream, outdir, "lin-smp")


def cmd_diagnose_cut(cfg, stream, outdir):
    model = _random_effects(cfg, stream.child(0), outdir)
    I = cfg["modular"]["I"]
    exact = exact_posterior(model, mh=_mh(cfg), rng=stream.child(1))
    cut = re_cut_exact_sampler(model, I, stream.child(2), zeta=False)
    diag = cut_diagnostic(model, exact=exact, cut=cut)
    cols = ["parameter", "mean_exact", "mean_cut", "mean_shift", "sd_exact", "sd_cut", "sd_ratio"]
    write_rows(os.path.join(outdir, "diagnostic.csv"), cols, diag.rows())
    write_rows(os.path.join(outdir, "kl.csv"), ["statistic", "value"], [{"statistic": "T", "value": diag.T}])
    names = model.phi_names[:MAX_PLOTTED]
    _plot(cfg, {f"log_{n}": {"exact": np.log(exact.column(n)), "cut": np.log(cut.column(n))} for n in names}, outdir)


def _safe(label: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label).strip("_")


def _candidates(cfg, p):
    out = []
    for active in parse_submodels(cfg["projection"]["submodels"]):
        if any(not 0 <= j < p for j in active):
            raise ConfigError(f"submodel {active} refers to a column outside 0..{p - 1}")
        try:
            out.append(SubmodelSpec.subset(active))
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
    out.extend(SubmodelSpec.l1_ball(r) for r in cfg["projection"]["l1_radii"])
    return out


def _projection_setup(cfg, stream, outdir):
    family, data = _family(cfg), _glm_data(cfg)
    candidates = _candidates(cfg, data.p)
    chain = _glm_exact_chain(cfg, family, data, stream.child(1))
    chain.to_csv(os.path.join(outdir, "reference_chain.csv"))
    return family, data, candidates, ReferencePosterior(family, data, chain.draws)


REPORT_COLS = ["label", "kind", "size", "delta", "L", "failures"]


def _projection_outputs(cfg, stream, outdir, ref, specs, reports):
    names = list(ref.data.column_names)
    pr = cfg["projection"]
    point_rows = []
    for k, (spec, rep) in enumerate(zip(specs, reports)):
        rep.to_csv(os.path.join(outdir, f"projection_{_safe(spec.label)}.csv"), names)
        pt = point_projection(ref, spec)
        point_rows.append({"label": spec.label, **{n: float(v) for n, v in zip(names, pt)}})
        if pr["clusters"] > 0:
            cp = clustered_projection(ref, spec, min(pr["clusters"], ref.T), stream.child(2, k))
            write_rows(os.path.join(outdir, f"clustered_{_safe(spec.label)}.csv"), ["cluster", "weight"] + names,
                       [{"cluster": c, "weight": float(w), **{n: float(v) for n, v in zip(names, th)}}
                        for c, (w, th) in enumerate(zip(cp.weights, cp.projected))])
    write_rows(os.path.join(outdir, "point_projection.csv"), ["label"] + names, point_rows)
    if pr["bootstrap"] > 0:
        B = glm_bayesian_bootstrap(ref.family, ref.data, pr["bootstrap"], stream.child(3))
        write_rows(os.path.join(outdir, "bootstrap.csv"), ["draw"] + names,
                   [{"draw": i, **{n: float(v) for n, v in zip(names, th)}} for i, th in enumerate(B)])
    plots = {}
    for j, n in enumerate(names[:MAX_PLOTTED]):
        plots[n] = {"reference": ref.draws[:, j]}
        for spec, rep in zip(specs, reports):
            plots[n][spec.label] = rep.projected[:, j]
    _plot(cfg, plots, outdir)


def _report_row(spec, rep, L, p):
    return {"label": spec.label, "kind": spec.kind, "size": spec.size(p), "delta": rep.delta, "L": L,
            "failures": len(rep.failures)}


def cmd_project(cfg, stream, outdir):
    family, data, candidates, ref = _projection_setup(cfg, stream, outdir)
    null = project_posterior(ref, SubmodelSpec.null())
    specs = [SubmodelSpec.null()] + candidates
    reports = [null] + [project_posterior(ref, s) for s in candidates]
    rows = [_report_row(s, r, relative_loss(r, null), data.p) for s, r in zip(specs, reports)]
    write_rows(os.path.join(outdir, "report.csv"), REPORT_COLS, rows)
    _projection_outputs(cfg, stream, outdir, ref, candidates, reports[1:])


def cmd_select(cfg, stream, outdir):
    family, data, candidates, ref = _projection_setup(cfg, stream, outdir)
    sel = select_submodel(ref, candidates, cfg["projection"]["threshold"])
    rows = [{"label": s.label, "kind": s.kind, "size": s.size(data.p), "L": L, "delta": delta,
             "selected": (not sel.no_selection) and s == sel.spec} for s, L, delta in sel.table]
    write_rows(os.path.join(outdir, "selection.csv"), ["label", "kind", "size", "L", "delta", "selected"], rows)
    write_rows(os.path.join(outdir, "selected.csv"), ["label", "L", "no_selection"],
               [{"label": sel.spec.label, "L": sel.loss, "no_selection": sel.no_selection}])
    rep = project_posterior(ref, sel.spec)
    _projection_outputs(cfg, stream, outdir, ref, [sel.spec], [rep])


def cmd_experiment(cfg, stream, outdir):
    e = cfg["experiment"]
    spec = ExperimentSpec(e["R"], e["N"], e["J"], e["phi2"], e["psi2"], e["beta1"], e["gammas"], e["exact_iterations"],
                          e["exact_thin"], e["cut_draws"], e["factor_j"])
    res = repeated_sampling_experiment(spec, e["methods"], rng=stream, workers=cfg["run"]["workers"])
    res.write(outdir)
    groups = {}
    for r in res.rows:
        key = r["method"] if r["gamma"] is None else f"{r['method']} {r['gamma']:g}"
        groups.setdefault(key, []).append(r["posterior_mean_phi1"])
    _plot(cfg, groups, outdir, kind="violin-summary", prefix="phi1_", reference=spec.true_phi1)


HANDLERS = {
    "fit-posterior": cmd_fit_posterior,
    "fit-brsl": cmd_fit_brsl,
    "fit-qposterior": cmd_fit_qposterior,
    "cut": cmd_cut,
    "smp": cmd_smp,
    "lin-smp": cmd_lin_smp,
    "diagnose-cut": cmd_diagnose_cut,
    "project": cmd_project,
    "select": cmd_select,
    "experiment": cmd_experiment,
}


# ---------------------------------------------------------------------------
# entry point


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ContractError, ParameterDomainError)):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (DegeneracyError, ConvergenceError, DesignError, InitializationError, FloatingPointError)):
        return EXIT_DEGENERACY
    return EXIT_OTHER


def error_record(exc: BaseException, command: str) -> dict:
    rec = {"status": "error", "exit_code": exit_code_for(exc), "command": command,
           "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, DataError):
        rec.update(code=exc.code, row=exc.row, column=exc.column)
    return rec


def _parser():
    ap = argparse.ArgumentParser(prog="misbayes", description="Inference under model misspecification.")
    ap.add_argument("--version", action="version", version=f"misbayes {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--seed", type=int, help="64-bit master seed (overrides [run] seed)")
    ap.add_argument("--workers", type=int, help="worker processes for replicate-level parallelism")
    ap.add_argument("--output", help="output directory (overrides [run] output_dir)")
    return ap


def run(command: str, config_path, seed=None, workers=None, output=None) -> int:
    """Run one subcommand; returns the process exit status."""
    overrides = {}
    if seed is not None:
        overrides[("run", "seed")] = seed
    if workers is not None:
        overrides[("run", "workers")] = workers
    if output is not None:
        overrides[("run", "output_dir")] = os.path.abspath(output)
    stage = None
    try:
        cfg = load_config(config_path, command, overrides)
        outdir = cfg.output_dir
        parent = os.path.dirname(outdir) or "."
        os.makedirs(parent, exist_ok=True)
        stage = tempfile.mkdtemp(prefix=".misbayes-", dir=parent)
        with np.errstate(over="ignore", under="ignore"):
            HANDLERS[command](cfg, RngStream(cfg.seed), stage)
        with open(os.path.join(stage, "manifest.ini"), "w") as fh:
            fh.write(cfg.manifest_text())
        os.makedirs(outdir, exist_ok=True)
        for name in sorted(os.listdir(stage)):
            os.replace(os.path.join(stage, name), os.path.join(outdir, name))
    except Exception as exc:  # every failure becomes an error record
        rec = error_record(exc, command)
        if rec["exit_code"] == EXIT_OTHER:
            log.debug("unexpected failure", exc_info=True)
        print(json.dumps(rec, default=str), file=sys.stderr)
        return rec["exit_code"]
    finally:
        if stage is not None:
            shutil.rmtree(stage, ignore_errors=True)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.seed, args.workers, args.output)


if __name__ == "__main__":
    sys.exit(main())
