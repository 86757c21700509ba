import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from finmeas.cli import main
from finmeas.errors import ConfigError
from finmeas.experiments import (
    emit_plots,
    load_config,
    run_experiment,
    validate_config,
)
from finmeas.io import sha256_file


def small_qpat_config(**overrides):
    config = {
        "model": "qpat",
        "seed": 42,
        "projection": {"levels": [1, 2, 4]},
        "qpat": {"n": 9},
        "budgets": {"pairs": 20},
        "stability": {"holdout_pairs": 10, "mismodeling_pairs": 10},
    }
    config.update(overrides)
    return config


# -- config validation ------------------------------------------------------


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key 'typo'"):
        validate_config(small_qpat_config(typo=1))


def test_unknown_nested_key_rejected():
    cfg = small_qpat_config()
    cfg["qpat"]["resolution"] = 17
    with pytest.raises(ConfigError, match="'qpat'.'resolution'"):
        validate_config(cfg)


def test_missing_seed_rejected():
    cfg = small_qpat_config()
    del cfg["seed"]
    with pytest.raises(ConfigError, match="seed"):
        validate_config(cfg)


def test_levels_must_increase():
    with pytest.raises(ConfigError, match="strictly increasing"):
        validate_config(small_qpat_config(projection={"levels": [2, 2, 4]}))


def test_budgets_must_be_positive():
    with pytest.raises(ConfigError, match="positive"):
        validate_config(small_qpat_config(budgets={"pairs": 0}))


def test_defaults_filled():
    cfg = validate_config(small_qpat_config())
    assert cfg["safety"] == 2.0
    assert cfg["budgets"]["lattice"] == 10**6
    assert cfg["eit"]["Nmax"] == 16
    assert cfg["K"] is None


# -- pipelines ----------------------------------------------------------------


def test_stability_pipeline_report(tmp_path):
    cfg = validate_config(small_qpat_config())
    report = run_experiment("stability", cfg, tmp_path)
    data = json.loads(report.path.read_text())
    assert data["schema"] == "fm-report/1"
    r = data["results"]
    assert r["status"] == "ok"
    assert len(r["defect_curve"]) == 3
    assert r["verified"] is True
    assert r["mismodeling_verified"] is True
    # curve monotone for the nested family
    vals = [s for _, s in r["defect_curve"]]
    assert vals == sorted(vals, reverse=True)
    # manifest hashes match the files on disk
    for name, digest in data["manifest"].items():
        assert sha256_file(tmp_path / name) == digest


def test_reconstruct_pipeline_report(tmp_path):
    cfg = validate_config(
        small_qpat_config(
            reconstruct={
                "level": 3,
                "probe_truths": 3,
                "probe_radii": [0.2, 0.1],
                "probe_max_iter": 800,
                "probe_conv_tol": 1e-6,
            },
            budgets={"pairs": 15},
        )
    )
    report = run_experiment("reconstruct", cfg, tmp_path)
    r = report.data["results"]
    assert r["status"] == "ok"
    assert r["final_relative_error"] < 1e-6
    assert r["guess_error"] < r["rho"]
    assert (tmp_path / "residual_vs_iteration.csv").exists()
    assert (tmp_path / "error_vs_iteration.csv").exists()


def test_rkhs_demo_pipeline(tmp_path):
    cfg = validate_config(
        {
            "model": "rkhs-demo",
            "seed": 7,
            "rkhs": {"node_counts": [2, 4, 8], "check_vectors": 20},
        }
    )
    report = run_experiment("rkhs-demo", cfg, tmp_path)
    rows = report.data["results"]["rkhs_rows"]
    assert [r["nodes"] for r in rows] == [2, 4, 8]
    assert all(r["interpolation_residual"] < 1e-8 for r in rows)
    assert report.data["results"]["stable_sampling_ok"] is True
    assert (tmp_path / "rkhs_sampling.csv").exists()


def test_scaling_requires_eit(tmp_path):
    cfg = validate_config(small_qpat_config())
    with pytest.raises(ConfigError, match="EIT"):
        run_experiment("scaling", cfg, tmp_path)
    # the partial report carries the stage marker
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["results"]["status"] == "failed"
    assert data["results"]["stage"] == "scaling"


def test_truth_must_match_dimension(tmp_path):
    cfg = validate_config(small_qpat_config(reconstruct={"truth": [1.0, 1.0]}))
    with pytest.raises(ConfigError, match="length"):
        run_experiment("reconstruct", cfg, tmp_path)


# -- reproducibility -------------------------------------------------------------


def _strip_volatile(data):
    data = dict(data)
    data.pop("wall_clock_s")
    return data


def test_reports_reproducible_modulo_wall_clock(tmp_path):
    cfg = validate_config(small_qpat_config())
    r1 = run_experiment("stability", cfg, tmp_path / "a")
    r2 = run_experiment("stability", cfg, tmp_path / "b")
    assert _strip_volatile(r1.data) == _strip_volatile(r2.data)
    for name in r1.data["manifest"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_emit_plots_byte_stable(tmp_path):
    results = {
        "defect_curve": [[1, 0.5], [2, 0.25]],
        "trace": {"residuals": [1.0, 0.1], "errors": [0.3, 0.03], "contraction_ratios": [0.1]},
    }
    emit_plots(results, tmp_path / "a")
    emit_plots(results, tmp_path / "b")
    for name in ("defect_vs_level.csv", "residual_vs_iteration.csv", "error_vs_iteration.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# -- CLI --------------------------------------------------------------------------


def test_cli_success_exit_zero(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(small_qpat_config()))
    code = main(["stability", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert code == 0
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_config_error_exit_two(tmp_path):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps(small_qpat_config(typo=True)))
    assert main(["stability", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
    cfg_path.write_text("{not json")
    assert main(["stability", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 2
    assert main(["stability", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_numerical_failure_exit_three(tmp_path):
    cfg = small_qpat_config(
        budgets={"pairs": 15, "lattice": 2},
        reconstruct={"level": 3, "probe_truths": 2, "probe_radii": [0.2],
                     "probe_max_iter": 400, "probe_conv_tol": 1e-5},
    )
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["reconstruct", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert code == 3
    data = json.loads((tmp_path / "out" / "report.json").read_text())
    assert data["results"]["status"] == "failed"


def test_cli_seed_override(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(small_qpat_config()))
    main(["stability", "--config", str(cfg_path), "--out", str(tmp_path / "a"), "--seed", "7"])
    data = json.loads((tmp_path / "a" / "report.json").read_text())
    assert data["config"]["seed"] == 7
    assert data["results"]["seed"] == 7


def test_cli_runs_as_subprocess(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps(small_qpat_config()))
    proc = subprocess.run(
        [sys.executable, "-m", "finmeas.cli", "stability",
         "--config", str(cfg_path), "--out", str(tmp_path / "out"), "--threads", "1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "report.json" in proc.stdout
