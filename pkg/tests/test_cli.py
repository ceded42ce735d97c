import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from parlab import cli
from parlab.errors import ConfigError
from parlab.expr import Expr

SMALL = ["--h", "0.1", "--dt", "0.05", "--t-depth", "0.2"]


def write(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def base_cfg(out, **probe):
    return {
        "problem": {"n": 2, "h": 0.1, "dt": 0.05, "t_depth": 0.2, "gamma": 1.0, "p": 3.0,
                    "data": {"initial": "0.3*abs(x1) - 0.2*x2^2", "source": "0.1*cos(x1)"}},
        "probes": [probe] if probe else [],
        "output_dir": str(out),
    }


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_flatness_plane_exit_zero(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["flatness", "--kind", "plane", "--slope", "3,0", "--c2", "1", "--out", str(out)] + SMALL)
    assert code == 0
    rep = json.loads((out / "00_flatness.json").read_text())
    assert rep["verdict"] == "Smooth(0)"
    assert (out / "00_flatness_levels.csv").read_text().startswith("k,r,lam,l1,l2,osc")
    man = json.loads((out / "manifest.json").read_text())
    assert man["probes"] == [{"probe": "00_flatness", "passed": True}]
    assert (out / "field.csv").exists() and (out / "field.csv.json").exists()
    assert (out / "dt_history.csv").read_text().startswith("step,t,dt,margin")


def test_failing_probe_exit_one(tmp_path):
    out = tmp_path / "o"
    cfg = base_cfg(out, type="seminorms", radius=0.5, min_time_exponent=5.0)
    assert cli.run(write(tmp_path, cfg)) == 1
    assert not json.loads((out / "00_seminorms.json").read_text())["passed"]


@pytest.mark.parametrize("mutate", [
    lambda c: c["problem"].update(bogus=1),
    lambda c: c["problem"].pop("h"),
    lambda c: c["problem"].update(p=0.5),
    lambda c: c["problem"]["data"].update(initial="import os"),
    lambda c: c["problem"]["data"].update(kind="plane"),
    lambda c: c.update(probes=[{"type": "flatness", "rho": "big"}]),
    lambda c: c.update(probes=[{"type": "nope"}]),
])
def test_malformed_config_exit_two(tmp_path, mutate, capsys):
    out = tmp_path / "o"
    cfg = base_cfg(out)
    mutate(cfg)
    assert cli.run(write(tmp_path, cfg)) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_unparsable_and_missing_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("problem: [unclosed")
    assert cli.run(bad) == 2
    assert cli.run(tmp_path / "missing.yaml") == 2


def test_compute_error_exit_three(tmp_path, capsys):
    out = tmp_path / "o"
    cfg = base_cfg(out)
    cfg["problem"].update(gamma=-0.9, eps=1e-30)
    cfg["problem"]["data"] = {"initial": "0"}
    assert cli.run(write(tmp_path, cfg)) == 3
    assert "compute error in solve" in capsys.readouterr().err


def test_byte_identical_reruns(tmp_path):
    out = tmp_path / "o"
    cfg = base_cfg(out, type="seminorms", radius=0.5, max_pairs=1000)
    cfg["probes"].append({"type": "flatness", "rho": 0.5, "kmax": 1})
    path = write(tmp_path, cfg)
    assert cli.run(path) in (0, 1)
    first = files(out)
    assert cli.run(path) in (0, 1)
    assert files(out) == first


def test_manifest_reproduces_run(tmp_path):
    out = tmp_path / "o"
    cfg = base_cfg(out, type="flatness", rho=0.5, kmax=1)
    assert cli.run(write(tmp_path, cfg)) in (0, 1)
    first = files(out)
    manifest = tmp_path / "manifest.json"
    manifest.write_bytes(first["manifest.json"])
    assert cli.run(manifest) in (0, 1)
    assert files(out) == first


def test_sweep_q_subcommand(tmp_path, monkeypatch):
    monkeypatch.setenv("PARLAB_THREADS", "2")
    out = tmp_path / "o"
    code = cli.main(["sweep-q", "--gamma", "1", "--p", "3", "--q", "4,8", "--out", str(out)] + SMALL)
    assert code in (0, 1)
    head, *rows = (out / "00_sweep-q_table.csv").read_text().splitlines()
    assert head == "q_norm,q1,q2,lip_w,lip_u,error" and len(rows) == 2


def test_certify_subcommand(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["certify", "--mode", "lipschitz", "--nu", "1.5", "--kappa0", "0.05",
                     "--h", "0.1", "--dt", "0.1", "--t-depth", "1.0", "--out", str(out)])
    rep = json.loads((out / "00_certify.json").read_text())
    assert rep["mode"] == "lipschitz" and rep["params"]["nu"] == 1.5
    assert code == (0 if rep["passed"] else 1)


def test_convergence_subcommand(tmp_path):
    out = tmp_path / "o"
    code = cli.main(["convergence", "--kind", "quadratic-stationary", "--hs", "0.1,0.05,0.025",
                     "--out", str(out)] + SMALL)
    assert code == 0
    rows = (out / "00_convergence_table.csv").read_text().splitlines()
    assert rows[0] == "h,error" and len(rows) == 4


def test_solve_and_probe_subcommands(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["solve", "--initial", "x1*x2", "--out", str(out)] + SMALL) == 0
    assert json.loads((out / "manifest.json").read_text())["probes"] == []
    out = tmp_path / "p"
    assert cli.main(["probe", "--radius", "0.5", "--alphas", "0.3,0.6", "--out", str(out)] + SMALL) == 0
    rep = json.loads((out / "00_seminorms.json").read_text())
    assert set(rep["holder"]) == {"0.3", "0.6"}


def test_base_config_flag(tmp_path):
    out = tmp_path / "o"
    base = write(tmp_path, base_cfg(tmp_path / "unused"), "base.yaml")
    assert cli.main(["solve", "--config", str(base), "--gamma", "0", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["params"]["gamma"] == 0 and man["params"]["source"] == "0.1*cos(x1)"


@pytest.mark.parametrize("cmd", ["run", "solve", "probe", "flatness", "certify", "sweep-q", "convergence"])
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main([cmd, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    assert "usage" in text
    if cmd != "run":
        assert "--gamma" in text and "--out" in text


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "parlab.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("solve", "probe", "flatness", "certify", "sweep-q", "convergence"):
        assert name in res.stdout


def test_validate_fills_defaults():
    cfg = cli.validate({"problem": {"n": 1, "h": 0.1, "dt": 0.1, "t_depth": 0.1, "gamma": 0, "p": 2,
                                    "data": {"kind": "plane"}}})
    assert cfg["seed"] == 0 and cfg["probes"] == [] and cfg["problem"]["eps"] is None
    with pytest.raises(ConfigError):
        cli.validate({"problem": {"n": 1, "h": 0.1, "dt": 0.1, "t_depth": 0.1, "gamma": 0, "p": 2,
                                  "data": {"kind": "quadratic-stationary"}},
                      "probes": [{"type": "convergence"}], "extra": 1})


# -- expression grammar -------------------------------------------------------

def test_expr_evaluates():
    x = np.array([[0.3, -0.4], [0.4, 0.3]])
    e = Expr("2*x1^2 - abs(x2) + sin(pi*x1) + r + exp(-t)", 2)
    want = 2 * x[0] ** 2 - np.abs(x[1]) + np.sin(np.pi * x[0]) + 0.5 + np.exp(-0.5)
    assert np.allclose(e(x, 0.5), want)
    assert e.uses_t and not e.time_independent
    assert Expr("x1", 2).time_independent
    assert Expr("3", 1)(np.zeros((1, 4))).shape == (4,)


@pytest.mark.parametrize("text", ["x3", "__import__('os')", "x1.real", "lambda: 1", "sin(x1, x2)",
                                  "[1, 2]", "1 +", "'a'"])
def test_expr_rejects(text):
    with pytest.raises(ConfigError):
        Expr(text, 2)
