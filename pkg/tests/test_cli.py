"""End-to-end tests for the command line driver: config validation, exit
codes, emitted file shapes, and byte-level rerun determinism."""

import hashlib
import json
import os
import textwrap
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from specfold.cli import main
from specfold.spectral import coupling_table

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


def write(path: Path, body: str) -> str:
    path.write_text(textwrap.dedent(body))
    return str(path)


def run(argv):
    return main([str(a) for a in argv])


# ---------------------------------------------------------------------------
# validation and exit codes
# ---------------------------------------------------------------------------

def test_validate_accepts_shipped_configs(capsys):
    for cfg in sorted(CONFIGS.glob("*.toml")):
        assert run(["validate", "--config", cfg]) == 0, cfg.name
        report = json.loads(capsys.readouterr().out)
        assert report["violations"] == []


def test_validate_flags_entry_scaling_rule(tmp_path, capsys):
    cfg = write(
        tmp_path / "bad.toml",
        """
        experiment = "simulate"
        [model]
        k0 = 2
        eps = 1e-2
        a = 0.5
        [simulate]
        u = [-0.4, 0.0]
        v = [0.09, 1e-2]
        t_final = 10.0
        """,
    )
    assert run(["validate", "--config", cfg]) == 2
    report = json.loads(capsys.readouterr().out)
    rules = {v["rule"] for v in report["violations"]}
    assert rules == {"entry_scaling_eps43"}


def test_validate_flags_stability_window(tmp_path, capsys):
    cfg = write(
        tmp_path / "badwin.toml",
        """
        experiment = "transition"
        [model]
        k0 = 3
        eps = 1e-7
        a = 0.5
        [transition]
        eps0 = 1e-6
        [transition.geometry]
        rho = 0.1
        delta = 1e-2
        """,
    )
    assert run(["validate", "--config", cfg]) == 2
    report = json.loads(capsys.readouterr().out)
    assert "k2_stability_window" in {v["rule"] for v in report["violations"]}


def test_run_rejects_invalid_config_with_status_2(tmp_path, capsys):
    cfg = write(
        tmp_path / "missing.toml",
        """
        experiment = "simulate"
        [model]
        k0 = 2
        eps = 1e-3
        a = 0.5
        [simulate]
        u = [-0.4, 0.0]
        v = [0.09, 0.0]
        """,
    )
    assert run(["simulate", "--config", cfg, "--out", tmp_path / "out"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "validation"
    assert any(v["field"] == "simulate.t_final" for v in err["violations"])


def test_runtime_failure_is_status_1_with_stage(tmp_path, capsys):
    cfg = write(
        tmp_path / "offslab.toml",
        """
        experiment = "transition"
        [model]
        k0 = 3
        eps = 1e-3
        a = 0.5
        [transition]
        du1 = 0.5
        eps0 = 0.1
        [transition.geometry]
        rho = 0.3
        delta = 0.05
        """,
    )
    assert run(["transition", "--config", cfg, "--out", tmp_path / "out", "--quiet"]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "runtime"
    assert "stage" in err["message"]


# ---------------------------------------------------------------------------
# emitted files
# ---------------------------------------------------------------------------

def test_coeffs_emits_every_admissible_triple(tmp_path, capsys):
    out = tmp_path / "out"
    assert run(["coeffs", "--config", CONFIGS / "coeffs.toml", "--out", out, "--quiet"]) == 0
    rows = (out / "coeffs.csv").read_text().strip().splitlines()
    assert rows[0] == "k,i,j,eta"
    assert len(rows) - 1 == 27  # all (k, i, j) in {2..4}^3
    table = coupling_table(4)
    for line in rows[1:]:
        k, i, j, eta = line.split(",")
        assert float(eta) == table.eta[(int(k), int(i), int(j))]


def test_simulate_trajectory_roundtrip(tmp_path):
    cfg = write(
        tmp_path / "sim.toml",
        """
        experiment = "simulate"
        [model]
        k0 = 2
        eps = 1e-3
        a = 0.5
        [simulate]
        u = [-0.4, 0.0]
        v = [0.09, 1e-5]
        t_final = 5.0
        """,
    )
    out = tmp_path / "out"
    assert run(["simulate", "--config", cfg, "--out", out, "--quiet"]) == 0
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,u1,u2,v1,v2"
    data = np.genfromtxt(out / "trajectory.csv", delimiter=",", names=True)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "completed"
    last = data[-1]
    assert_allclose(
        [last["u1"], last["u2"], last["v1"], last["v2"]],
        summary["final_state"],
        rtol=0,
        atol=0,
    )


def test_chart_flags_override_and_conserve_eps(tmp_path):
    entry = write(
        tmp_path / "entry.toml",
        """
        chart = "K1"
        u11 = -1.1892071150027210
        r1 = 0.3
        uk = [0.0]
        vk = [0.0]
        eps1 = 0.037037037037037035
        """,
    )
    cfg = write(
        tmp_path / "chart.toml",
        f"""
        experiment = "chart"
        [model]
        eps = 1e-3
        a = 0.5
        [chart]
        entry = "{entry}"
        t_max = 50.0
        """,
    )
    out = tmp_path / "out"
    code = run(
        ["chart", "--config", cfg, "--chart", "k1", "--exit-section", "eps1=0.045", "--out", out, "--quiet"]
    )
    assert code == 0
    header = (out / "chart_trajectory.csv").read_text().splitlines()[0]
    assert header == "t,u11,r1,uk2,vk2,eps1"
    summary = json.loads((out / "chart_summary.json").read_text())
    assert summary["section_hit"]
    assert summary["exit"][-1] == pytest.approx(0.045, rel=1e-9)
    assert summary["exit_downstairs"]["eps"] == pytest.approx(1e-3, rel=1e-8)


def test_blowup_check_verdict_table(tmp_path):
    cfg = write(
        tmp_path / "blow.toml",
        """
        experiment = "blowup-check"
        [[blowup-check.cases]]
        u1_0 = 0.0
        u2_0 = -0.3
        v1_0 = 0.1
        v2_0 = 1.0
        eps = 1e-2
        [[blowup-check.cases]]
        u1_0 = 0.0
        u2_0 = -0.3
        v1_0 = 0.1
        v2_0 = 1.0
        eps = 1.0
        """,
    )
    out = tmp_path / "out"
    assert run(["blowup-check", "--config", cfg, "--out", out, "--quiet"]) == 0
    lines = (out / "verdicts.csv").read_text().strip().splitlines()
    assert lines[0] == "u1_0,u2_0,v1_0,v2_0,eps,blowup_time,deadline,before_sign_change"
    assert [line.split(",")[-1] for line in lines[1:]] == ["false", "false"]
    summary = json.loads((out / "blowup_summary.json").read_text())
    assert summary["n_cases"] == 2
    assert summary["n_blowup_before_sign_change"] == 0


def test_transition_report_shape(tmp_path):
    out = tmp_path / "out"
    assert run(["transition", "--config", CONFIGS / "transition.toml", "--out", out, "--quiet"]) == 0
    report = json.loads((out / "transition.json").read_text())
    assert set(report) >= {"entry", "exit", "time", "bounds", "chart_path"}
    assert report["chart_path"] == ["K1", "K2", "K3"]
    assert report["exit"]["u"][0] == pytest.approx(0.3, rel=1e-9)
    for bound in report["bounds"]:
        assert set(bound) == {"name", "bound", "observed", "pass"}
        assert bound["pass"]


# ---------------------------------------------------------------------------
# sweep: seeded entries, per-case files, byte-level determinism
# ---------------------------------------------------------------------------

SWEEP_MINI = """
experiment = "sweep"
seed = 5
[model]
k0 = 3
a = 0.5
[sweep]
eps = [3e-4, 1e-3]
eps0 = 0.1
[sweep.entries]
count = 1
jitter = 1e-4
[sweep.geometry]
rho = 0.3
delta = 0.05
[sweep.constants]
q0_radius = 0.15
beta = 0.5
"""


def test_sweep_outputs_and_rerun_determinism(tmp_path):
    cfg = write(tmp_path / "sweep.toml", SWEEP_MINI)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run(["sweep", "--config", cfg, "--out", out_a, "--quiet"]) == 0
    assert run(["sweep", "--config", cfg, "--out", out_b, "--workers", 2, "--quiet"]) == 0

    payload = json.loads((out_a / "sweep.json").read_text())
    assert 0.4 < payload["slope"] < 0.9
    assert payload["v1_out"][0] < payload["v1_out"][1]

    cases = (out_a / "sweep_cases.csv").read_text().strip().splitlines()
    assert cases[0] == "index,eps,entry_du1,v1_out,time,bounds_failed"
    assert len(cases) - 1 == 4  # 2 eps x (canonical + 1 jittered entry)
    du1_by_case = {}
    for line in cases[1:]:
        idx, _, du1 = line.split(",")[:3]
        du1_by_case.setdefault(idx, []).append(float(du1))
    assert all(vals[0] == 0.0 for vals in du1_by_case.values())
    jitters = [vals[1] for vals in du1_by_case.values()]
    assert jitters[0] != jitters[1]  # per-case counter keys
    assert all(abs(j) <= 1e-4 for j in jitters)

    # rerun with a different worker count: all numeric files byte-identical
    for name in ("case_0000.csv", "case_0001.csv", "sweep_cases.csv", "sweep.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_manifest_hashes_and_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECFOLD_OUT", str(tmp_path / "root"))
    assert run(["coeffs", "--config", CONFIGS / "coeffs.toml", "--quiet"]) == 0
    out = tmp_path / "root" / "coeffs"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "coeffs"
    assert manifest["golden_constants"]["omega0"] == pytest.approx(3.3065832101572403, rel=1e-15)
    assert manifest["config"] == {"experiment": "coeffs", "seed": 0, "model": {"k0": 4, "a": 0.5}}
    for rec in manifest["files"]:
        digest = hashlib.sha256((out / rec["path"]).read_bytes()).hexdigest()
        assert digest == rec["sha256"]
        assert rec["bytes"] == (out / rec["path"]).stat().st_size
