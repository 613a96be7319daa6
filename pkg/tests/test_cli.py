"""End-to-end command contract: exit codes, strict schemas, byte-stable outputs."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "twostep_bayes.cli", *map(str, args)],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=1))
    return path


FIT_CFG = {
    "seed": 42,
    "app": "Iso",
    "experiment": {"kind": "gaussian", "n": 32},
    "data": {"truth": {"type": "step", "change_indices": [0, 16], "levels": [0.0, 1.5]}},
    "prior": {"m_max": 6},
    "sampler": {"n_iter": 2500, "burn_in": 500},
}

BERN_CFG = {
    "seed": 1,
    "experiment": {"kind": "gaussian", "n": 4},
    "pair": {"f0": 0.0, "f1": 0.5},
    "lambda_grid": [-0.5, 0.25, 0.5],
    "reps": 4000,
}

SWEEP_CFG = {
    "seed": 3,
    "app": "Iso",
    "truth": {"type": "step_fractions", "fractions": [0.0, 0.5], "levels": [0.0, 1.0]},
    "prior": {"m_max": 5},
    "sampler": {"n_iter": 900, "burn_in": 300},
    "n_grid": [16, 24, 32, 48],
    "replications": 20,
}


# ---------------------------------------------------------------------------
# exit code contract


def test_bernstein_gaussian_passes(tmp_path):
    cfg = write_config(tmp_path, "b.json", BERN_CFG)
    r = run_cli("bernstein-check", "--config", cfg, "--output-dir", tmp_path / "out")
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "out" / "bernstein.json").read_text())
    assert rep["passed"] is True
    assert (tmp_path / "out" / "bernstein.svg").exists()
    assert (tmp_path / "out" / "metadata.json").exists()


def test_lambda_outside_domain_is_config_error(tmp_path):
    bad = dict(BERN_CFG)
    bad["experiment"] = {"kind": "poisson", "n": 8, "M": 4.0}
    bad["pair"] = {"f0": 1.0, "f1": 1.5}
    bad["lambda_grid"] = [0.1, 100.0]
    cfg = write_config(tmp_path, "b.json", bad)
    r = run_cli("bernstein-check", "--config", cfg, "--output-dir", tmp_path / "out")
    assert r.returncode == 2
    assert "config error" in r.stderr


def test_missing_seed_rejected(tmp_path):
    bad = {k: v for k, v in BERN_CFG.items() if k != "seed"}
    cfg = write_config(tmp_path, "b.json", bad)
    r = run_cli("bernstein-check", "--config", cfg, "--output-dir", tmp_path / "out")
    assert r.returncode == 2
    assert "seed" in r.stderr


def test_seed_flag_fills_missing_config_seed(tmp_path):
    bad = {k: v for k, v in BERN_CFG.items() if k != "seed"}
    cfg = write_config(tmp_path, "b.json", bad)
    r = run_cli("bernstein-check", "--config", cfg, "--output-dir", tmp_path / "out", "--seed", 5)
    assert r.returncode == 0, r.stderr


def test_unknown_field_rejected(tmp_path):
    bad = dict(BERN_CFG, typo_field=1)
    cfg = write_config(tmp_path, "b.json", bad)
    r = run_cli("bernstein-check", "--config", cfg, "--output-dir", tmp_path / "out")
    assert r.returncode == 2
    assert "typo_field" in r.stderr


def test_missing_config_file(tmp_path):
    r = run_cli("bernstein-check", "--config", tmp_path / "nope.json")
    assert r.returncode == 2


# ---------------------------------------------------------------------------
# fit


def test_fit_outputs_and_determinism(tmp_path):
    cfg = write_config(tmp_path, "fit.json", FIT_CFG)
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    r1 = run_cli("fit", "--config", cfg, "--output-dir", out1)
    r2 = run_cli("fit", "--config", cfg, "--output-dir", out2)
    assert r1.returncode == 0, r1.stderr
    assert r2.returncode == 0

    for name in ("chain.csv", "chain.jsonl", "fit.csv", "histogram.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    fit = np.loadtxt(out1 / "fit.csv", delimiter=",", skiprows=1)
    values = fit[:, 1]
    assert np.all(np.diff(values) >= -1e-12)  # posterior mean stays monotone

    hist = json.loads((out1 / "histogram.json").read_text())
    assert sum(hist["fractions"].values()) == pytest.approx(1.0, rel=1e-9)


def test_fit_from_csv_and_malformed_line(tmp_path):
    good = tmp_path / "data.csv"
    good.write_text("y\n" + "\n".join(str(0.1 * i) for i in range(12)) + "\n")
    (tmp_path / "data.json").write_text(
        json.dumps({"kind": "GaussianReg", "n": 12, "seed": None})
    )
    cfg_payload = {
        "seed": 9,
        "app": "Iso",
        "experiment": {"kind": "gaussian", "n": 12},
        "data": {"csv": str(good)},
        "prior": {"m_max": 3},
        "sampler": {"n_iter": 1200, "burn_in": 200},
    }
    cfg = write_config(tmp_path, "fit.json", cfg_payload)
    r = run_cli("fit", "--config", cfg, "--output-dir", tmp_path / "out")
    assert r.returncode == 0, r.stderr

    bad = tmp_path / "bad.csv"
    bad.write_text("y\n1.0\nnot-a-number\n")
    (tmp_path / "bad.json").write_text(
        json.dumps({"kind": "GaussianReg", "n": 2, "seed": None})
    )
    cfg_payload["data"] = {"csv": str(bad)}
    cfg_payload["experiment"]["n"] = 2
    cfg = write_config(tmp_path, "fit2.json", cfg_payload)
    r = run_cli("fit", "--config", cfg, "--output-dir", tmp_path / "out2")
    assert r.returncode == 2
    assert "line 3" in r.stderr


def test_shipped_demo_config_fits_monotone(tmp_path):
    r = run_cli(
        "fit",
        "--config", REPO / "configs" / "iso_fit_demo.json",
        "--output-dir", tmp_path / "demo",
    )
    assert r.returncode == 0, r.stderr
    fit = np.loadtxt(tmp_path / "demo" / "fit.csv", delimiter=",", skiprows=1)
    assert np.all(np.diff(fit[:, 1]) >= -1e-12)


# ---------------------------------------------------------------------------
# rate sweep


def test_rate_sweep_contract(tmp_path):
    cfg = write_config(tmp_path, "sweep.json", SWEEP_CFG)
    out = tmp_path / "out"
    r = run_cli("rate-sweep", "--config", cfg, "--output-dir", out)
    assert r.returncode == 0, r.stderr
    report = json.loads((out / "report.json").read_text())
    assert report["slope"] < 0
    assert len(report["per_n"]) == 4
    assert (out / "cells.csv").exists() and (out / "rate.svg").exists()

    # collision without --force
    r2 = run_cli("rate-sweep", "--config", cfg, "--output-dir", out)
    assert r2.returncode == 2
    assert "--force" in r2.stderr
    r3 = run_cli("rate-sweep", "--config", cfg, "--output-dir", out, "--force")
    assert r3.returncode == 0, r3.stderr


def test_rate_sweep_preconditions(tmp_path):
    short = dict(SWEEP_CFG, n_grid=[16, 24, 32])
    cfg = write_config(tmp_path, "s1.json", short)
    assert run_cli("rate-sweep", "--config", cfg, "--output-dir", tmp_path / "a").returncode == 2

    few = dict(SWEEP_CFG, replications=5)
    cfg = write_config(tmp_path, "s2.json", few)
    assert run_cli("rate-sweep", "--config", cfg, "--output-dir", tmp_path / "b").returncode == 2


# ---------------------------------------------------------------------------
# remaining commands, metadata quarantine


def test_decay_prior_check_oracle_compare(tmp_path):
    decay = {
        "seed": 11,
        "experiment": {"kind": "gaussian", "n": 8},
        "pair": {"f0": 0.0, "f1": 0.5},
        "n_grid": [8, 16, 32],
        "reps": 2000,
    }
    cfg = write_config(tmp_path, "d.json", decay)
    r = run_cli("test-decay", "--config", cfg, "--output-dir", tmp_path / "d")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "d" / "decay.json").exists()

    pc = {
        "seed": 12,
        "app": "Iso",
        "prior": {"m_max": 6},
        "n": 60,
        "p2": {"m": [1], "radius_sq": 0.1, "reps": 4000},
    }
    cfg = write_config(tmp_path, "p.json", pc)
    r = run_cli("prior-check", "--config", cfg, "--output-dir", tmp_path / "p")
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "p" / "prior_check.json").read_text())
    assert rep["P1"] is True
    assert rep["P2"]["passed"] is True

    oc = {
        "seed": 13,
        "app": "Iso",
        "truth": {"type": "step_fractions", "fractions": [0.0, 0.5], "levels": [0.0, 1.0]},
        "n": 40,
        "prior": {"m_max": 5},
        "sampler": {"n_iter": 1200, "burn_in": 300},
        "replications": 2,
    }
    cfg = write_config(tmp_path, "o.json", oc)
    r = run_cli("oracle-compare", "--config", cfg, "--output-dir", tmp_path / "o")
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "o" / "oracle_compare.json").read_text())
    assert rep["m_star"] == [2]
    assert rep["risk_to_oracle_ratio"] > 0


def test_metadata_quarantines_timestamp(tmp_path):
    cfg = write_config(tmp_path, "fit.json", FIT_CFG)
    out1, out2 = tmp_path / "m1", tmp_path / "m2"
    assert run_cli("fit", "--config", cfg, "--output-dir", out1).returncode == 0
    assert run_cli("fit", "--config", cfg, "--output-dir", out2).returncode == 0
    meta1 = json.loads((out1 / "metadata.json").read_text())
    meta2 = json.loads((out2 / "metadata.json").read_text())
    assert "created_utc" in meta1
    assert meta1["seed"] == meta2["seed"] == 42
    # primary outputs stayed identical even though metadata may differ
    assert (out1 / "fit.csv").read_bytes() == (out2 / "fit.csv").read_bytes()


def test_usage_error_without_subcommand():
    r = run_cli()
    assert r.returncode == 2
