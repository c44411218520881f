"""Small configurations for every subcommand, shared by the CLI and acceptance tests."""
import os

import misbayes

DATA_DIR = os.path.join(os.path.dirname(misbayes.__file__), "data")
CARROTS = os.path.join(DATA_DIR, "carrots.csv")

GLM_DATA = f"""
[data]
path = {CARROTS}
kind = glm
response = y
trials = n
covariates = log(dose), factor(block)
"""

RE_SIM = """
[simulate]
N = 6
J = 8
"""

SMALL = {
    "fit-posterior": GLM_DATA + "[mcmc]\niterations = 600\nthin = 2\n",
    "fit-brsl": "[model]\nname = gaussian-toy\nsummary = moments\n[bsl]\nm = 10\n[mcmc]\niterations = 200\nthin = 1\n",
    "fit-qposterior": GLM_DATA + "[mcmc]\niterations = 600\nthin = 2\n",
    "cut": RE_SIM + "[modular]\nI = 30\ninner_iters = 30\n[mcmc]\niterations = 600\nthin = 10\n",
    "smp": RE_SIM + "[modular]\nI = 30\ninner_iters = 30\ngamma = 0.5\n[mcmc]\niterations = 600\nthin = 10\n",
    "lin-smp": RE_SIM + "[modular]\nI = 30\ninner_iters = 30\ngamma = 0.5\n[mcmc]\niterations = 600\nthin = 10\n",
    "diagnose-cut": RE_SIM + "[modular]\nI = 200\n[mcmc]\niterations = 2000\nthin = 10\n",
    "project": GLM_DATA + "[mcmc]\niterations = 400\nthin = 10\n"
    "[projection]\nsubmodels = 0,1; 0,2,3\nl1_radii = 1.0\nclusters = 3\nbootstrap = 5\n",
    "select": GLM_DATA + "[mcmc]\niterations = 400\nthin = 10\n[projection]\nsubmodels = 0,1; 0,1,2,3\nthreshold = 0.1\n",
    "experiment": "[experiment]\nR = 3\nN = 6\nmethods = exact, cut, lin-smp\ngammas = 0.5\n"
    "exact_iterations = 1000\nexact_thin = 10\ncut_draws = 200\n",
}


def write_config(directory, command, extra=""):
    path = os.path.join(directory, f"{command}.ini")
    with open(path, "w") as fh:
        fh.write(f"[run]\ncommand = {command}\nplots = false\n" + SMALL[command] + extra)
    return path


def csv_bytes(outdir):
    """Map every CSV file in ``outdir`` to its bytes."""
    out = {}
    for name in sorted(os.listdir(outdir)):
        if name.endswith(".csv"):
            with open(os.path.join(outdir, name), "rb") as fh:
                out[name] = fh.read()
    return out
