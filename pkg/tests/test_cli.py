from __future__ import annotations

import json
import subprocess
import sys

import pytest

from evolproc.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def scalar_config(tmp_path):
    assert main(["example", "scalar-sanity", "--out", str(tmp_path)]) == EXIT_OK
    return tmp_path / "scalar-sanity.json"


def edit(path, **coefs):
    raw = json.loads(path.read_text())
    raw["coefficients"].update(coefs)
    path.write_text(json.dumps(raw))
    return path


def test_example_then_rates(tmp_path, scalar_config, capsys):
    out = tmp_path / "run"
    assert main(["rates", str(scalar_config), "--out", str(out), "--threads", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert "process_rate: pass" in lines and "solution_rate: pass" in lines
    rep = json.loads((out / "report.json").read_text())
    assert rep["ok"] and not any(f["exact"] for f in rep["fitted_slopes"].values())
    for name in ("rates.csv", "process_axioms.json", "trajectory_eps_0.csv", "trajectory_eps_0.003.csv"):
        assert (out / name).is_file(), name


def test_global_flags_before_subcommand(tmp_path, scalar_config):
    out = tmp_path / "hyp"
    assert main(["--out", str(out), "check-hypotheses", str(scalar_config)]) == EXIT_OK
    rep = json.loads((out / "hypotheses.json").read_text())
    assert rep["kind"] == "hypotheses" and len(rep["families"]) == 5


def test_propagate_autonomous(tmp_path, scalar_config):
    cfg = edit(scalar_config, a="2")
    assert main(["propagate", str(cfg), "--out", str(tmp_path), "--dump"]) == EXIT_OK
    rep = json.loads((tmp_path / "process_axioms.json").read_text())
    assert rep["axioms"]["cocycle_defect"] <= 1e-10
    assert (tmp_path / "process.npz").is_file()


def test_solve_writes_trajectories(tmp_path, scalar_config):
    out = tmp_path / "sol"
    assert main(["solve", str(scalar_config), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "solution.json").read_text())
    assert summary["failure"] is None
    assert (out / "trajectory_eps_0.1.csv").is_file() and (out / "trajectory_eps_0.1_states.csv").is_file()


def test_missing_file(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["rates", str(missing)]) == EXIT_USAGE
    assert str(missing) in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"problem": "scalar", "coefficients": {"a": "1 +"}, "eps_list": [1, 2, 3, 4]}))
    assert main(["rates", str(p)]) == EXIT_CONFIG
    assert "coefficients.a" in capsys.readouterr().err


def test_failing_stage_exit_code(tmp_path, scalar_config, capsys):
    cfg = edit(scalar_config, a="1 - 20*eps")
    assert main(["rates", str(cfg), "--out", str(tmp_path)]) == EXIT_CHECK
    assert "stage build failed" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main([]) != EXIT_OK


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "evolproc", "example", "wave-paper", "--out", str(tmp_path)],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0, res.stderr
    assert json.loads((tmp_path / "wave-paper.json").read_text())["problem"] == "wave"
