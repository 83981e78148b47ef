"""The ctool runner: config handling, outputs, and determinism."""

import csv
import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from mtconf.cli import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    NoiseKind,
    _fmt,
    build_config,
    emit_plotdata,
    main,
    read_config_file,
    run,
)


def run_cli(*args):
    return main(["run", *[str(a) for a in args]])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


BENCH = (
    "--experiment", "table1", "--methods", "qn", "--alphas", "0.2",
    "--trials", "2", "--ntrain", "60", "--ntune", "40", "--ncal", "50",
    "--ntest", "30", "--seed", "99",
)

MULTIROUND = (
    "--experiment", "multiround", "--alphas", "0.1", "--trials", "2",
    "--ntune", "150", "--ncal", "120", "--ntest", "80", "--seed", "99",
)


def test_read_config_file_parses_all_sections(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(
        """
[experiment]
experiment = multiround
methods = cqr_minimax, qn_minimax
alphas = 0.15, 0.05
seed = 7
threads = 2
tau = auto

[data]
n_cal = 300
trials = 10

[rounds]
tasks = 2
sigma = 0.4, 0.2, 0.1, 0.05, 0.02
quantile_alpha = 0.2
"""
    )
    values = read_config_file(path)
    assert values["experiment"] == "multiround"
    assert values["methods"] == ("cqr_minimax", "qn_minimax")
    assert values["alphas"] == (0.15, 0.05)
    assert values["seed"] == 7 and values["threads"] == 2
    assert values["tau"] is None
    assert values["n_cal"] == 300 and values["trials"] == 10
    assert values["tasks"] == 2 and values["quantile_alpha"] == 0.2
    assert values["sigma"] == (0.4, 0.2, 0.1, 0.05, 0.02)


def test_read_config_file_diagnostics(tmp_path):
    bad_section = tmp_path / "a.ini"
    bad_section.write_text("[misc]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"unknown section \[misc\]"):
        read_config_file(bad_section)

    bad_key = tmp_path / "b.ini"
    bad_key.write_text("[experiment]\nalpa = 0.1\n")
    with pytest.raises(ConfigError, match="unknown key 'alpa'"):
        read_config_file(bad_key)

    bad_value = tmp_path / "c.ini"
    bad_value.write_text("[experiment]\nalphas = 0.2, frog\n")
    with pytest.raises(ConfigError, match="could not parse"):
        read_config_file(bad_value)

    bad_int = tmp_path / "d.ini"
    bad_int.write_text("[experiment]\nseed = soon\n")
    with pytest.raises(ConfigError, match="seed"):
        read_config_file(bad_int)

    with pytest.raises(ConfigError, match="cannot read config"):
        read_config_file(tmp_path / "missing.ini")


def test_build_config_precedence_and_defaults():
    cfg = build_config({"seed": 1, "alphas": (0.5,)}, {"seed": 9, "trials": None})
    assert cfg.seed == 9  # flag wins
    assert cfg.alphas == (0.5,)  # file survives a None flag
    assert cfg.trials == 500  # table1 default

    sweep = build_config({"experiment": "ntune_sweep"}, {})
    assert sweep.trials == 200 and sweep.n_cal == 2000
    assert sweep.alphas == (0.10,)

    mr = build_config({"experiment": "multiround"}, {})
    assert mr.methods == ("cqr_minimax",)
    assert mr.n_train == 0 and mr.alphas == (0.15, 0.10, 0.05)


def test_build_config_env_threads(monkeypatch):
    monkeypatch.setenv("CTOOL_THREADS", "3")
    assert build_config({}, {}).threads == 3
    assert build_config({"threads": 2}, {}).threads == 2
    monkeypatch.setenv("CTOOL_THREADS", "many")
    with pytest.raises(ConfigError, match="CTOOL_THREADS"):
        build_config({}, {})


def test_build_config_tau_auto_flag_overrides_file():
    cfg = build_config({"tau": 0.5, "experiment": "multiround"}, {"tau": "auto"})
    assert cfg.tau is None


def test_config_validation_errors():
    with pytest.raises(ConfigError, match="experiment must be one of"):
        ExperimentConfig(experiment="bogus")
    with pytest.raises(ConfigError, match="known:"):
        ExperimentConfig(methods=("nope",))
    with pytest.raises(ConfigError, match="miscoverage"):
        ExperimentConfig(alphas=(1.5,))
    with pytest.raises(ConfigError, match="calibrates exactly one target"):
        ExperimentConfig(methods=("single",))
    with pytest.raises(ConfigError, match="tau"):
        ExperimentConfig(experiment="multiround", methods=("cqr_minimax",), tau=-1.0)
    with pytest.raises(ConfigError, match="trials"):
        ExperimentConfig(trials=0)


def test_main_rejects_bad_configs(tmp_path, capsys):
    assert run_cli("--experiment", "table1", "--alphas", "2.0") == 2
    assert "ctool: config error:" in capsys.readouterr().err
    assert run_cli(tmp_path / "missing.ini") == 2
    assert "cannot read config" in capsys.readouterr().err
    assert run_cli("--experiment", "table1", "--methods", "single") == 2
    assert "exactly one target" in capsys.readouterr().err


def test_main_reports_unwritable_output_dir(tmp_path, capsys):
    blocked = tmp_path / "blocked"
    blocked.write_text("still a file")
    assert run_cli(*BENCH, "--output-dir", blocked) == 1
    assert "cannot write to output dir" in capsys.readouterr().err


def test_benchmark_outputs(tmp_path):
    out = tmp_path / "res"
    assert run_cli(*BENCH, "--output-dir", out) == 0
    content = (out / "results.csv").read_text()
    assert content.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_rows(out / "results.csv")
    assert len(rows) == 3  # one method, one level, three targets
    assert [r["target"] for r in rows] == ["1", "2", "3"]
    assert all(r["method"] == "qn" and r["score_kind"] == "qn" for r in rows)
    assert len({r["ejc"] for r in rows}) == 1  # joint value repeats per target
    assert all(r["eac"] == "" and r["r_avg"] == "" for r in rows)
    for name in ("plot_ejc.csv", "plot_esc_extremes.csv", "plot_mil.csv"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["experiment"] == "table1"
    assert manifest["config"]["seed"] == 99
    assert "results.csv" in manifest["outputs"]
    assert manifest["wall_time_s"] >= 0


def test_results_are_byte_identical_across_reruns_and_threads(tmp_path):
    args = list(BENCH)
    args[args.index("--methods") + 1] = "qn,ia"
    outs = [tmp_path / name for name in ("a", "b", "c")]
    assert run_cli(*args, "--output-dir", outs[0], "--threads", "1") == 0
    assert run_cli(*args, "--output-dir", outs[1], "--threads", "1") == 0
    assert run_cli(*args, "--output-dir", outs[2], "--threads", "4") == 0
    blobs = [(p / "results.csv").read_bytes() for p in outs]
    assert blobs[0] == blobs[1] == blobs[2]
    plots = [(p / "plot_ejc.csv").read_bytes() for p in outs]
    assert plots[0] == plots[1] == plots[2]


def test_starved_calibration_serializes_infinite_lengths(tmp_path):
    out = tmp_path / "res"
    assert (
        run_cli(
            "--experiment", "table1", "--methods", "qn", "--alphas", "0.02",
            "--trials", "2", "--ntrain", "60", "--ntune", "40", "--ncal", "10",
            "--ntest", "20", "--output-dir", out,
        )
        == 0
    )
    rows = read_rows(out / "results.csv")
    assert all(row["mil"] == "inf" for row in rows)
    assert all(row["ejc"] == "1" for row in rows)


def test_coverage_sweep_plot_values_match_results(tmp_path):
    out = tmp_path / "res"
    assert (
        run_cli(
            "--experiment", "coverage_sweep", "--methods", "qn", "--alphas", "0.3,0.1",
            "--trials", "2", "--ntrain", "60", "--ntune", "40", "--ncal", "50",
            "--ntest", "30", "--output-dir", out,
        )
        == 0
    )
    results = read_rows(out / "results.csv")
    want = {(str(1 - float(r["alpha"]))): r["ejc"] for r in results if r["target"] == "1"}
    plot = read_rows(out / "plot_ejc.csv")
    assert {p["x"] for p in plot} == {"0.7", "0.9"}
    for p in plot:
        assert p["series"] == "qn"
        assert p["value"] == want[p["x"]]


def test_ntune_sweep_warns_when_under_tuned(tmp_path, capsys):
    path = tmp_path / "sweep.ini"
    path.write_text(
        """
[experiment]
experiment = ntune_sweep
methods = cqr_minimax
ntune_values = 50, 600
runs = 1

[data]
n_train = 60
n_cal = 40
n_test = 30
trials = 2
"""
    )
    out = tmp_path / "res"
    assert run_cli(path, "--output-dir", out) == 0
    err = capsys.readouterr().err
    assert "under-tuned" in err and "n_tune=50" in err
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["warnings"]) == 1
    rows = read_rows(out / "results.csv")
    assert len(rows) == 6  # two sweep sizes, three targets
    assert all(r["n_tune"] == r["sweep_value"] for r in rows)
    assert (out / "plot_esc_extremes.csv").exists()


def test_multiround_rows_and_manifest_tau(tmp_path):
    out = tmp_path / "res"
    assert run_cli(*MULTIROUND, "--output-dir", out) == 0
    rows = read_rows(out / "results.csv")
    assert [r["method"] for r in rows] == ["cqr_minimax", "sc"]
    for row in rows:
        assert row["eac"] != "" and row["r_avg"] != "" and row["ejc"] != ""
        assert row["target"] == "" and row["esc"] == "" and row["mil"] == ""
        assert row["score_kind"] == "cqr"
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["tau_used"]) == {"0.1"}
    assert manifest["tau_used"]["0.1"] > 0
    assert (out / "plot_eac.csv").exists() and (out / "plot_ravg.csv").exists()

    fixed = tmp_path / "fixed"
    assert run_cli(*MULTIROUND, "--tau", "0.08", "--output-dir", fixed) == 0
    manifest = json.loads((fixed / "manifest.json").read_text())
    assert manifest["tau_used"]["0.1"] == 0.08


def test_label_sweep_rows(tmp_path):
    path = tmp_path / "labels.ini"
    path.write_text(
        "[experiment]\nexperiment = multiround_labels\nlabel_values = 1, 2\n"
    )
    out = tmp_path / "res"
    assert (
        run_cli(
            path, "--trials", "2", "--ntune", "100", "--ncal", "100",
            "--ntest", "60", "--output-dir", out,
        )
        == 0
    )
    rows = read_rows(out / "results.csv")
    assert [r["sweep_value"] for r in rows] == ["1", "2"]
    assert all(r["method"] == "cqr_minimax" for r in rows)
    plot = read_rows(out / "plot_ravg.csv")
    assert [p["x"] for p in plot] == ["1", "2"]


def test_manifest_echo_reproduces_the_run(tmp_path):
    first = tmp_path / "first"
    assert run_cli(*MULTIROUND, "--output-dir", first) == 0
    echo = json.loads((first / "manifest.json").read_text())["config"]
    echo["noise"] = NoiseKind(echo["noise"])
    echo["output_dir"] = str(tmp_path / "second")
    rebuilt = ExperimentConfig(
        **{k: tuple(v) if isinstance(v, list) else v for k, v in echo.items()}
    )
    assert run(rebuilt) == 0
    assert (first / "results.csv").read_bytes() == (
        tmp_path / "second" / "results.csv"
    ).read_bytes()


def test_emit_plotdata_single_target_extremes_coincide(tmp_path):
    rows = []
    for value, esc in ((50, 0.8), (500, 0.9)):
        rows.append(
            {
                "experiment": "ntune_sweep", "method": "cqr_minimax",
                "score_kind": "cqr", "alpha": 0.1, "target": 1, "ejc": esc,
                "esc": esc, "mil": 1.0, "eac": None, "r_avg": None,
                "n_cal": 10, "n_tune": value, "T": 2, "seed": 0, "sweep_value": value,
            }
        )
    emit_plotdata(rows, tmp_path)
    plot = read_rows(tmp_path / "plot_esc_extremes.csv")
    by_series = {p["series"]: [] for p in plot}
    for p in plot:
        by_series[p["series"]].append((p["x"], p["value"]))
    assert by_series["cqr_minimax/min"] == by_series["cqr_minimax/max"]


def test_fmt_cells():
    assert _fmt(None) == "" and _fmt("") == ""
    assert _fmt("sc") == "sc"
    assert _fmt(5) == "5" and _fmt(np.int64(7)) == "7"
    assert _fmt(float("inf")) == "inf" and _fmt(float("-inf")) == "-inf"
    assert _fmt(0.123456789) == "0.123457"
    assert _fmt(np.float64(0.25)) == "0.25"


def test_console_script_is_wired():
    exe = shutil.which("ctool")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run(
        [exe, "run", "--experiment", "table1", "--alphas", "2.0"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "config error" in proc.stderr
