import csv
import hashlib
import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cli_configs import CARROTS, DATA_DIR, SMALL, csv_bytes, write_config
from misbayes import cli
from misbayes.config import SCHEMA, load_config, parse_submodels
from misbayes.errors import ConfigError, ContractError, DataError
from misbayes.io import Roles, ingest_csv
from misbayes.plots import density_overlay_svg, emit_plots, violin_summary_svg


def run(tmp_path, command, extra="", **kw):
    cfg = write_config(tmp_path, command, extra)
    out = tmp_path / kw.pop("out", "out")
    return cli.run(command, cfg, output=str(out), **kw), out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def error_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


# -- ingestion ---------------------------------------------------------------

def test_ingest_carrots_design():
    d = ingest_csv(CARROTS, Roles("glm", "y", "n", ("log(dose)", "factor(block)")))
    assert d.n == 24 and d.p == 4
    assert d.column_names == ("(Intercept)", "log(dose)", "block2", "block3")
    assert np.all(d.Z[:, 0] == 1.0)
    assert set(np.unique(d.Z[:, 2])) == {0.0, 1.0}


def test_ingest_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,n,dose\n1,5,1\n7,5,2\n")
    with pytest.raises(DataError) as e:
        ingest_csv(bad, Roles("glm", "y", "n", ("dose",)))
    assert e.value.code == "invariant" and e.value.row == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(DataError) as e:
        ingest_csv(empty, Roles())
    assert e.value.code == "empty-file"
    cell = tmp_path / "cell.csv"
    cell.write_text("y,n,dose\n1,5,abc\n")
    with pytest.raises(DataError) as e:
        ingest_csv(cell, Roles("glm", "y", "n", ("dose",)))
    assert (e.value.code, e.value.row, e.value.column) == ("parse", 1, "dose")
    with pytest.raises(DataError) as e:
        ingest_csv(tmp_path / "nope.csv", Roles())
    assert e.value.code == "missing-file"
    with pytest.raises(DataError) as e:
        ingest_csv(CARROTS, Roles("glm", "y", "n", ("weight",)))
    assert e.value.code == "missing-column"


def test_ingest_matrix(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("a,b,c\n1,2,3\n4,5,6\n")
    assert ingest_csv(p, Roles("matrix")).tolist() == [[1, 2, 3], [4, 5, 6]]


# -- configuration -----------------------------------------------------------

def test_config_defaults_and_manifest(tmp_path):
    cfg = load_config(text="[run]\ncommand = experiment\n")
    assert cfg["experiment"]["R"] == 100 and cfg["experiment"]["methods"] == ("exact", "cut")
    again = load_config(text=cfg.manifest_text())
    assert again.values == cfg.values
    assert set(cfg.values) == set(SCHEMA)


@pytest.mark.parametrize(
    "text",
    [
        "[modular]\ngamma = 1.5\n",
        "[abc]\neps = 0\n",
        "[model]\nbogus = 1\n",
        "[run]\ncommand = fit-brsl\n",
        "[nosuch]\nx = 1\n",
        "[mcmc]\niterations = abc\n",
        "[experiment]\ngammas = 0.5, 1.2\n",
        "[bsl]\nm = 2\n",
    ],
)
def test_config_rejections(text):
    with pytest.raises(ConfigError):
        load_config(text="[run]\ncommand = fit-brsl\n" + text)


def test_parse_submodels():
    assert parse_submodels("0,1; 0,2,3;") == [(0, 1), (0, 2, 3)]
    with pytest.raises(ConfigError):
        parse_submodels("0,x")


def test_relative_paths(tmp_path, monkeypatch):
    sub = tmp_path / "conf"
    sub.mkdir()
    (sub / "a.ini").write_text("[run]\ncommand = project\noutput_dir = res\n[data]\npath = d.csv\n"
                               "[projection]\nsubmodels = 0,1\n")
    monkeypatch.chdir(tmp_path)
    cfg = load_config(sub / "a.ini")
    assert cfg["data"]["path"] == str(sub / "d.csv")
    assert cfg.output_dir == str(tmp_path / "res")


# -- runs and exit codes -----------------------------------------------------

@pytest.mark.parametrize("command", sorted(SMALL))
def test_every_subcommand_runs(tmp_path, command):
    code, out = run(tmp_path, command)
    assert code == 0
    files = os.listdir(out)
    assert "manifest.ini" in files
    assert any(f.endswith(".csv") for f in files)
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".misbayes-")]


def test_missing_data_exit_3_without_outputs(tmp_path, capsys):
    cfg = tmp_path / "missing.ini"
    cfg.write_text(open(write_config(tmp_path, "fit-posterior")).read().replace(CARROTS, str(tmp_path / "gone.csv")))
    target = tmp_path / "fresh"
    assert cli.run("fit-posterior", cfg, output=str(target)) == 3
    rec = error_json(capsys)
    assert rec["exit_code"] == 3 and rec["code"] == "missing-file" and rec["status"] == "error"
    assert not target.exists()
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".misbayes-")]


def test_data_error_exit_3_has_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    rows = open(CARROTS).read().splitlines()
    y, n, dose, block = rows[5].split(",")
    rows[5] = ",".join([str(int(n) + 1), n, dose, block])
    bad.write_text("\n".join(rows) + "\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(open(write_config(tmp_path, "fit-qposterior")).read().replace(CARROTS, str(bad)))
    assert cli.run("fit-qposterior", cfg, output=str(tmp_path / "o")) == 3
    rec = error_json(capsys)
    assert rec["code"] == "invariant" and rec["row"] == 5


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = tmp_path / "u.ini"
    cfg.write_text("[run]\ncommand = smp\n[modular]\nbogus = 1\n")
    out = tmp_path / "o"
    assert cli.run("smp", cfg, output=str(out)) == 2
    assert error_json(capsys)["error"] == "ConfigError"
    assert not out.exists()


def test_gamma_out_of_range_exit_2(tmp_path, capsys):
    cfg = tmp_path / "g.ini"
    cfg.write_text("[run]\ncommand = smp\n[modular]\ngamma = 1.5\n")
    assert cli.run("smp", cfg, output=str(tmp_path / "o")) == 2
    assert "gamma" in error_json(capsys)["message"]


def test_bsl_m_checked_before_simulation(tmp_path, capsys, monkeypatch):
    calls = []
    monkeypatch.setattr(cli, "brsl_posterior", lambda *a, **k: calls.append(a))
    cfg = tmp_path / "b.ini"
    # three summaries need m >= 5
    cfg.write_text("[run]\ncommand = fit-brsl\n[model]\nname = gaussian-toy\nsummary = moments\nchannels = 3\n"
                   "[bsl]\nm = 4\n")
    assert cli.run("fit-brsl", cfg, output=str(tmp_path / "o")) == 2
    assert "m >= d + 2" in error_json(capsys)["message"]
    assert not calls


def test_degenerate_group_exit_4(tmp_path, capsys):
    mat = tmp_path / "z.csv"
    mat.write_text("a,b,c\n1,2,3\n5,5,5\n0,1,0\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[run]\ncommand = cut\n[data]\npath = {mat}\nkind = matrix\n[modular]\nI = 10\n"
                   "[mcmc]\niterations = 200\nthin = 10\n")
    assert cli.run("cut", cfg, output=str(tmp_path / "o")) == 4
    assert error_json(capsys)["error"] == "DegeneracyError"


def test_main_entry(tmp_path, capsys):
    cfg = write_config(tmp_path, "fit-posterior")
    assert cli.main(["fit-posterior", "--config", cfg, "--output", str(tmp_path / "m"), "--seed", "7"]) == 0
    assert "seed = 7" in (tmp_path / "m" / "manifest.ini").read_text()
    with pytest.raises(SystemExit):
        cli.main(["--version"])
    assert "misbayes" in capsys.readouterr().out


# -- determinism and manifests -----------------------------------------------

def test_rerun_is_byte_identical(tmp_path):
    a = run(tmp_path, "project", out="a")[1]
    b = run(tmp_path, "project", out="b")[1]
    assert csv_bytes(a) == csv_bytes(b)
    c = run(tmp_path, "project", out="c", seed=99)[1]
    assert csv_bytes(a) != csv_bytes(c)


def test_manifest_reproduces_run(tmp_path):
    code, out = run(tmp_path, "cut")
    manifest = out / "manifest.ini"
    again = tmp_path / "again"
    assert cli.run("cut", manifest, output=str(again)) == 0
    assert csv_bytes(out) == csv_bytes(again)
    # the manifest alone, with its own output_dir, reproduces the run
    rerun = load_config(manifest)
    assert rerun.output_dir == str(out)


def test_workers_do_not_change_results(tmp_path):
    a = run(tmp_path, "experiment", out="a", workers=1)[1]
    b = run(tmp_path, "experiment", out="b", workers=2)[1]
    assert csv_bytes(a) == csv_bytes(b)


def test_experiment_row_count(tmp_path):
    code, out = run(tmp_path, "experiment")
    rows = read_csv(out / "experiment.csv")
    assert len(rows) == 3 * 3
    assert {r["method"] for r in rows} == {"exact", "cut", "lin-smp"}


def test_inputs_not_mutated(tmp_path):
    digest = lambda p: hashlib.sha256(open(p, "rb").read()).hexdigest()  # noqa: E731
    before = {f: digest(os.path.join(DATA_DIR, f)) for f in os.listdir(DATA_DIR)}
    cfg = write_config(tmp_path, "select")
    cfg_digest = digest(cfg)
    assert cli.run("select", cfg, output=str(tmp_path / "o")) == 0
    assert digest(cfg) == cfg_digest
    assert {f: digest(os.path.join(DATA_DIR, f)) for f in os.listdir(DATA_DIR)} == before


def test_bundled_example_configs_parse():
    for name in os.listdir(DATA_DIR):
        if name.endswith(".ini"):
            cfg = load_config(os.path.join(DATA_DIR, name))
            assert cfg.command == name[:-4]


def test_readme_ini_grammar_block_parses():
    readme = os.path.join(os.path.dirname(__file__), os.pardir, "README.md")
    if not os.path.isfile(readme):
        pytest.skip("README not present")
    with open(readme) as fh:
        text = fh.read()
    block = text.split("```ini\n", 1)[1].split("```", 1)[0]
    cfg = load_config(text=block)
    assert cfg.command == "project"
    for section, keys in SCHEMA.items():
        assert set(keys) <= set(cfg.raw[section])
    # every schema key is documented
    shown = {(s, k) for s in SCHEMA for k in SCHEMA[s] if f"\n{k} = " in block}
    assert shown == {(s, k) for s in SCHEMA for k in SCHEMA[s]}


# -- plots -------------------------------------------------------------------

def test_density_overlay_one_svg_per_parameter(tmp_path):
    g = np.random.default_rng(0)
    results = {p: {m: g.normal(size=200) for m in ("exact", "cut", "smp")} for p in ("a", "b", "c/d")}
    paths = emit_plots(results, "density-overlay", tmp_path)
    assert len(paths) == 3 and len(set(paths)) == 3
    for p in paths:
        root = ET.parse(p).getroot()
        assert root.tag.endswith("svg")
        assert len(root.findall("{http://www.w3.org/2000/svg}polyline")) == 3


def test_violin_disjoint_supports_well_formed():
    g = np.random.default_rng(1)
    svg = violin_summary_svg({"low": g.normal(-10, 1, 300), "high": g.normal(10, 1, 300)}, "t", reference=0.0)
    root = ET.fromstring(svg)
    assert len(root.findall("{http://www.w3.org/2000/svg}polygon")) == 2


def test_constant_sample_point_marker():
    root = ET.fromstring(density_overlay_svg({"flat": np.full(50, 2.0), "x": np.linspace(0, 4, 50)}, "t"))
    assert len(root.findall("{http://www.w3.org/2000/svg}circle")) == 1
    root = ET.fromstring(violin_summary_svg({"flat": np.full(10, 1.0)}, "t"))
    assert not root.findall("{http://www.w3.org/2000/svg}polygon")
    assert root.findall("{http://www.w3.org/2000/svg}circle")


def test_plot_contracts(tmp_path):
    with pytest.raises(ContractError):
        emit_plots({}, "density-overlay", tmp_path)
    with pytest.raises(ContractError):
        emit_plots({"a": [1.0]}, "pie", tmp_path)


def test_plots_written_when_enabled(tmp_path):
    cfg = write_config(tmp_path, "fit-qposterior").replace(".ini", "")
    text = open(cfg + ".ini").read().replace("plots = false", "plots = true")
    open(cfg + ".ini", "w").write(text)
    assert cli.run("fit-qposterior", cfg + ".ini", output=str(tmp_path / "o")) == 0
    svgs = sorted(f for f in os.listdir(tmp_path / "o") if f.endswith(".svg"))
    assert len(svgs) == 4
    for f in svgs:
        ET.parse(tmp_path / "o" / f)
