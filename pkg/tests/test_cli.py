import json
import os

import numpy as np
import pandas as pd
import pytest

from seqvam.cli import main

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run("simulate", "--out", str(out), "--students", "120",
               "--teachers-per-year", "4", "--seed", "5",
               "--mechanism", "mcar", "--rate", "0.3")
    assert code == 0
    return out


@pytest.fixture(scope="module")
def fit_dirs(sim_dir, tmp_path_factory):
    dirs = {}
    for model in ("MAR", "SEL"):
        out = tmp_path_factory.mktemp(f"fit_{model}")
        code = run("fit", "--panel", str(sim_dir / "panel.csv"), "--model", model,
                   "--out", str(out), "--chains", "2", "--burn-in", "100",
                   "--keep", "100", "--seed", "3", "--rhat-threshold", "10")
        assert code == 0
        dirs[model] = out
    return dirs


def test_simulate_outputs(sim_dir):
    assert (sim_dir / "panel.csv").is_file()
    assert (sim_dir / "truth.csv").is_file()
    cfg = json.loads((sim_dir / "resolved_config.json").read_text())
    assert cfg["students"] == 120 and cfg["mechanism"] == "mcar"


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("simulate", "--out", str(out), "--students", "30",
                   "--teachers-per-year", "3", "--seed", "9") == 0
    assert (a / "panel.csv").read_bytes() == (b / "panel.csv").read_bytes()


def test_fit_outputs(fit_dirs):
    out = fit_dirs["MAR"]
    for name in ("draws.csv", "convergence.csv", "dic.json", "ingest_report.txt",
                 "ingest_report.kv", "resolved_config.json"):
        assert (out / name).is_file(), name
    assert (out / "archive" / "draws.npz").is_file()
    assert (out / "archive" / "run_manifest.json").is_file()
    assert (out / "summary" / "summary.csv").is_file()
    dic_info = json.loads((out / "dic.json").read_text())
    assert dic_info["dic"] == pytest.approx(
        -4 * dic_info["lbar"] + 2 * dic_info["l_at_mean"])
    draws = pd.read_csv(out / "draws.csv")
    assert list(draws.columns[:2]) == ["chain", "iteration"]
    assert len(draws) == 200
    conv = pd.read_csv(out / "convergence.csv")
    assert {"param", "rhat", "converged"} <= set(conv.columns)


def test_fit_config_file_and_override(sim_dir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"model": "MAR", "chains": 2, "burn_in": 20,
                                    "keep": 20, "rhat_threshold": 10.0}))
    out = tmp_path / "fit"
    code = run("fit", "--config", str(cfg_path), "--panel",
               str(sim_dir / "panel.csv"), "--out", str(out), "--keep", "40")
    assert code == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["keep"] == 40           # flag overrides config file
    assert resolved["burn_in"] == 20        # config file overrides default


def test_fit_rejects_unknown_config_key(sim_dir, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"model": "MAR", "bogus_key": 1}))
    code = run("fit", "--config", str(cfg_path), "--panel",
               str(sim_dir / "panel.csv"), "--out", str(tmp_path / "o"))
    assert code == 2
    assert not (tmp_path / "o").exists()    # no partial outputs


def test_fit_missing_panel_is_io_error(tmp_path):
    assert run("fit", "--panel", str(tmp_path / "nope.csv"),
               "--out", str(tmp_path / "o")) == 4


def test_fit_convergence_failure_exit_code(sim_dir, tmp_path):
    out = tmp_path / "fit"
    code = run("fit", "--panel", str(sim_dir / "panel.csv"), "--model", "MAR",
               "--out", str(out), "--chains", "2", "--burn-in", "10",
               "--keep", "10", "--rhat-threshold", "0.9")
    assert code == 3
    assert (out / "summary" / "summary.csv").is_file()   # outputs still written


def test_weights_from_profile(tmp_path):
    prof = tmp_path / "prof.json"
    prof.write_text(json.dumps({"nu": 0.71, "sigma": [0.58, 0.47, 0.45, 0.37, 0.37]}))
    out = tmp_path / "w"
    assert run("weights", "--profile", str(prof), "--out", str(out)) == 0
    table = pd.read_csv(out / "average_weights.csv")
    np.testing.assert_allclose(
        table["mean_weight"], [1.4207, 2.9815, 3.6709, 4.0581, 4.3041], atol=1e-3)


def test_weights_from_summary(fit_dirs, sim_dir, tmp_path):
    out = tmp_path / "w"
    code = run("weights", "--summary", str(fit_dirs["MAR"] / "summary"),
               "--panel", str(sim_dir / "panel.csv"), "--out", str(out))
    assert code == 0
    assert (out / "score_weights.csv").is_file()
    assert (out / "classroom_weights.csv").is_file()


def test_weights_requires_one_source(tmp_path):
    assert run("weights", "--out", str(tmp_path / "w")) == 2


def test_compare_report(fit_dirs, sim_dir, tmp_path):
    out = tmp_path / "comp"
    code = run("compare", "--fit-a", str(fit_dirs["MAR"]), "--fit-b",
               str(fit_dirs["SEL"]), "--panel", str(sim_dir / "panel.csv"),
               "--out", str(out))
    assert code == 0
    report = (out / "report.md").read_text()
    assert "DIC" in report
    corr = pd.read_csv(out / "teacher_correlations.csv")
    assert list(corr["grade"]) == [1, 2, 3, 4, 5]
    assert (out / "student_effect_shift.csv").is_file()
    assert (out / "completeness_slopes.csv").is_file()


def test_compare_refuses_dic_for_pmix(sim_dir, fit_dirs, tmp_path):
    pmix_out = tmp_path / "fit_pmix"
    code = run("fit", "--panel", str(sim_dir / "panel.csv"), "--model", "PMIX",
               "--out", str(pmix_out), "--chains", "2", "--burn-in", "50",
               "--keep", "50", "--pattern-threshold", "20",
               "--rhat-threshold", "10")
    assert code == 0
    out = tmp_path / "comp"
    code = run("compare", "--fit-a", str(fit_dirs["MAR"]), "--fit-b",
               str(pmix_out), "--panel", str(sim_dir / "panel.csv"),
               "--out", str(out))
    assert code == 0
    report = (out / "report.md").read_text()
    assert "not comparable" in report
    assert not (out / "student_effect_shift.csv").exists()


def test_summarize_roundtrip(fit_dirs, tmp_path):
    out = tmp_path / "summ"
    code = run("summarize", "--archive", str(fit_dirs["MAR"] / "archive"),
               "--out", str(out), "--rhat-threshold", "10")
    assert code == 0
    a = pd.read_csv(fit_dirs["MAR"] / "summary" / "summary.csv", index_col=0)
    b = pd.read_csv(out / "summary" / "summary.csv", index_col=0)
    pd.testing.assert_frame_equal(a, b)


def test_summarize_missing_archive(tmp_path):
    assert run("summarize", "--archive", str(tmp_path / "none"),
               "--out", str(tmp_path / "o")) == 4


def test_golden_fit_reproduction(tmp_path):
    """A committed short-protocol fit must reproduce bit-identically."""
    panel = os.path.join(GOLDEN, "panel.csv")
    out = tmp_path / "fit"
    code = run("fit", "--panel", panel, "--model", "MAR", "--out", str(out),
               "--chains", "2", "--burn-in", "50", "--keep", "50",
               "--seed", "123", "--rhat-threshold", "10")
    assert code == 0
    produced = (out / "summary" / "summary.csv").read_text()
    golden = open(os.path.join(GOLDEN, "summary.csv")).read()
    assert produced == golden
