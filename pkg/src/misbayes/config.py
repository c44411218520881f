"""Run configuration: INI sections with a fixed schema.

Every key has a type and a default; unknown sections or keys are rejected.
The resolved configuration (defaults filled in, paths absolute) is written
back out as the run manifest, which is itself a valid configuration file.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .errors import ConfigError

COMMANDS = (
    "fit-posterior",
    "fit-brsl",
    "fit-qposterior",
    "cut",
    "smp",
    "lin-smp",
    "diagnose-cut",
    "project",
    "select",
    "experiment",
)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _optfloat(s: str):
    v = s.strip().lower()
    return None if v in ("", "none") else float(s)


def _list(conv):
    def parse(s: str):
        return tuple(conv(x.strip()) for x in s.split(",") if x.strip())

    return parse


def _str(s: str) -> str:
    return s.strip()


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


# section -> key -> (parser, default text)
SCHEMA = {
    "run": {
        "command": (_str, ""),
        "seed": (_u64, "12345"),
        "output_dir": (_str, "out"),
        "workers": (int, "1"),
        "plots": (_bool, "true"),
    },
    "data": {
        "path": (_str, ""),
        "kind": (_str, "glm"),
        "response": (_str, "y"),
        "trials": (_str, ""),
        "covariates": (_list(str), ""),
        "intercept": (_bool, "true"),
    },
    "model": {
        "name": (_str, "glm-binomial"),
        "family": (_str, "binomial-logit"),
        "dispersion": (float, "1.0"),
        "summary": (_str, "robust-mest"),
        "huber_c": (float, "1.2"),
        "prior_var": (float, "100.0"),
        "n": (int, "100"),
        "channels": (int, "3"),
        "theta_true": (float, "0.0"),
        "censor_t1": (float, "-2.0"),
        "censor_t2": (float, "2.0"),
        "shift_index": (int, "-1"),
        "shift_sd": (float, "0.0"),
    },
    "posterior": {
        "method": (_str, "exact"),
    },
    "mcmc": {
        "iterations": (int, "50000"),
        "thin": (int, "10"),
        "burn_in": (int, "0"),
        "proposal_scale": (float, "1.0"),
    },
    "abc": {
        "m": (int, "1"),
        "eps": (float, "0.1"),
        "kernel": (_str, "gaussian"),
        "distance": (_str, "mahalanobis-pilot"),
        "n_pilot": (int, "2000"),
    },
    "bsl": {
        "m": (int, "20"),
        "variant": (_str, "variance-inflate"),
        "gamma_prior_scale": (float, "0.5"),
    },
    "simulate": {
        "N": (int, "10"),
        "J": (int, "10"),
        "phi2": (float, "0.5"),
        "psi2": (float, "2.0"),
        "beta1": (_optfloat, "10.0"),
    },
    "modular": {
        "I": (int, "2000"),
        "inner_iters": (int, "200"),
        "zeta_sampler": (_str, "mh"),
        "factor_j": (_bool, "false"),
        "gamma": (float, "0.5"),
    },
    "experiment": {
        "R": (int, "100"),
        "N": (int, "100"),
        "J": (int, "10"),
        "phi2": (float, "0.5"),
        "psi2": (float, "2.0"),
        "beta1": (_optfloat, "10.0"),
        "methods": (_list(str), "exact, cut"),
        "gammas": (_list(float), "0.25, 0.5, 0.75"),
        "exact_iterations": (int, "20000"),
        "exact_thin": (int, "10"),
        "cut_draws": (int, "4000"),
        "factor_j": (_bool, "false"),
    },
    "projection": {
        "submodels": (_str, ""),
        "l1_radii": (_list(float), ""),
        "threshold": (float, "0.1"),
        "clusters": (int, "0"),
        "bootstrap": (int, "0"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration: ``values[section][key]`` typed, ``raw`` as text."""

    command: str
    values: dict
    raw: dict
    source: str = ""

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def output_dir(self) -> str:
        return self.values["run"]["output_dir"]

    def manifest_text(self) -> str:
        lines = ["# resolved run configuration; rerun with: misbayes " + self.command + " --config <this file>"]
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                lines.append(f"{key} = {self.raw[section][key]}")
            lines.append("")
        return "\n".join(lines)


def _parser():
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    return cp


def load_config(path=None, command: str = "", overrides: dict | None = None, text: str | None = None) -> RunConfig:
    """Parse, validate types and fill defaults.

    ``overrides`` maps ``(section, key)`` to text values applied after the
    file (command-line flags). A relative data path resolves against the
    config file's directory, a relative output directory against the
    working directory.
    """
    cp = _parser()
    base = os.getcwd()
    if text is not None:
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
    elif path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = os.path.dirname(os.path.abspath(path))
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; known: {', '.join(SCHEMA)}")
        for key, value in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]; known: {', '.join(SCHEMA[section])}")
            raw[section][key] = value.strip()
    for (section, key), value in (overrides or {}).items():
        raw[section][key] = str(value)
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, _) in keys.items():
            try:
                values[section][key] = conv(raw[section][key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {key} = {raw[section][key]!r}: {exc}") from None
    cmd = command or values["run"]["command"]
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}; choose from {', '.join(COMMANDS)}")
    if values["run"]["command"] and command and values["run"]["command"] != command:
        raise ConfigError(f"config is for command {values['run']['command']!r}, not {command!r}")
    raw["run"]["command"] = values["run"]["command"] = cmd
    # data paths resolve against the config file, output paths against the cwd
    for section, key, root in (("data", "path", base), ("run", "output_dir", os.getcwd())):
        p = values[section][key]
        if p and not os.path.isabs(p):
            p = os.path.normpath(os.path.join(root, p))
            values[section][key] = p
            raw[section][key] = p
    validate(cmd, values)
    return RunConfig(cmd, values, raw, source=str(path or ""))


def _need(cond, message):
    if not cond:
        raise ConfigError(message)


def validate(cmd: str, v: dict) -> None:
    """Checks that need no data or simulation."""
    _need(v["run"]["workers"] >= 1, "workers must be >= 1")
    mc = v["mcmc"]
    _need(mc["iterations"] >= 1, "mcmc iterations must be >= 1")
    _need(mc["thin"] >= 1, "mcmc thin must be >= 1")
    _need(0 <= mc["burn_in"] < mc["iterations"], "mcmc burn_in must satisfy 0 <= burn_in < iterations")
    _need((mc["iterations"] - mc["burn_in"]) // mc["thin"] >= 10, "mcmc settings store fewer than 10 draws")
    _need(mc["proposal_scale"] > 0, "proposal_scale must be positive")
    _need(v["model"]["prior_var"] > 0, "prior_var must be positive")
    _need(v["model"]["huber_c"] > 0, "huber_c must be positive")
    _need(v["model"]["dispersion"] > 0, "dispersion must be positive")
    _need(v["abc"]["eps"] > 0, "ABC tolerance eps must be positive")
    _need(v["abc"]["m"] >= 1, "ABC m must be >= 1")
    _need(v["abc"]["kernel"] in ("gaussian", "uniform"), "ABC kernel must be gaussian or uniform")
    _need(v["abc"]["distance"] in ("euclidean", "mahalanobis-pilot"), "ABC distance must be euclidean or mahalanobis-pilot")
    _need(v["bsl"]["variant"] in ("standard", "mean-adjust", "variance-inflate"), "unknown BSL variant")
    _need(v["bsl"]["gamma_prior_scale"] > 0, "gamma_prior_scale must be positive")
    _need(v["posterior"]["method"] in ("exact", "abc", "bsl"), "posterior method must be exact, abc or bsl")
    _need(v["data"]["kind"] in ("glm", "matrix"), "data kind must be glm or matrix")
    _need(0.0 <= v["modular"]["gamma"] <= 1.0, "gamma must lie in [0, 1]")
    _need(v["modular"]["I"] >= 1 and v["modular"]["inner_iters"] >= 1, "I and inner_iters must be >= 1")
    _need(v["modular"]["zeta_sampler"] in ("mh", "grid", "none"), "zeta_sampler must be mh, grid or none")
    s = v["simulate"]
    _need(s["N"] >= 1 and s["J"] >= 2, "simulate needs N >= 1 and J >= 2")
    _need(s["phi2"] > 0 and s["psi2"] > 0, "simulate phi2 and psi2 must be positive")
    e = v["experiment"]
    _need(e["R"] >= 1, "experiment R must be >= 1")
    _need(all(0.0 <= g <= 1.0 for g in e["gammas"]), "experiment gammas must lie in [0, 1]")
    _need(set(e["methods"]) <= {"exact", "cut", "smp", "lin-smp"} and e["methods"], "unknown experiment method")
    p = v["projection"]
    _need(0.0 < p["threshold"] <= 1.0, "selection threshold must lie in (0, 1]")
    _need(all(r > 0 for r in p["l1_radii"]), "L1 radii must be positive")
    _need(p["clusters"] >= 0 and p["bootstrap"] >= 0, "clusters and bootstrap must be >= 0")
    if cmd in ("fit-brsl",) or (cmd == "fit-posterior" and v["posterior"]["method"] == "bsl"):
        _need(v["bsl"]["m"] >= 3, "BSL needs m >= d + 2 >= 3")
    if cmd in ("cut", "smp", "lin-smp"):
        stored = (mc["iterations"] - mc["burn_in"]) // mc["thin"]
        _need(stored >= v["modular"]["I"], f"mcmc settings store {stored} draws, fewer than I = {v['modular']['I']}")
    if cmd in ("project", "select"):
        _need(bool(p["submodels"].strip()) or bool(p["l1_radii"]), "projection needs submodels or l1_radii")


def parse_submodels(text: str) -> list:
    """``"0,1; 0,1,2"`` -> ``[(0, 1), (0, 1, 2)]``."""
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            out.append(tuple(int(x) for x in chunk.split(",") if x.strip()))
        except ValueError:
            raise ConfigError(f"cannot parse submodel {chunk!r}") from None
    return out
