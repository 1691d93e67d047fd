from __future__ import annotations

import pytest

from gdfq import cli
from gdfq.experiments import OUTPUT_ENV, read_comparison

from test_experiments import TINY


@pytest.fixture
def cfg_path(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(out=tmp_path / "out"))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_teacher_train(cfg_path, tmp_path, capsys):
    assert run("teacher-train", "--config", cfg_path) == 0
    assert "train_acc" in capsys.readouterr().out
    assert (tmp_path / "out" / "teacher.ckpt").exists()


def test_quantize_single_method(cfg_path, tmp_path, capsys):
    assert run("quantize", "--config", cfg_path, "--method", "kl", "--calibration", "gaussian") == 0
    assert '"run": "ptq-kl-gaussian"' in capsys.readouterr().out
    assert "ptq-kl-gaussian" in read_comparison(tmp_path / "out" / "comparison.csv")


def test_gdfq_and_report(cfg_path, tmp_path, capsys):
    assert run("gdfq", "--config", cfg_path, "--seed", "3", "--act-bits", "6") == 0
    assert run("report", "--config", cfg_path) == 0
    table = read_comparison(tmp_path / "out" / "comparison.csv")
    assert table["gdfq"]["act_bits"] == "6" and "fp32" in table
    assert "ptq-minmax" not in table


def test_calibrate_defaults_all_methods(cfg_path, tmp_path):
    assert run("calibrate", "--config", cfg_path) == 0
    table = read_comparison(tmp_path / "out" / "comparison.csv")
    assert {"calib-minmax", "calib-mse", "calib-aciq", "calib-kl"} <= set(table)


def test_ablate(cfg_path, tmp_path):
    assert run("ablate", "--config", cfg_path) == 0
    assert read_comparison(tmp_path / "out" / "comparison.csv")["gdfq-w8"]["weight_bits"] == "8"


def test_ablate_without_runs(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert run("ablate", "--output-dir", tmp_path) == 1
    assert "group = ablation" in capsys.readouterr().err


def test_scatter(cfg_path, tmp_path):
    assert run("gdfq", "--config", cfg_path) == 0
    g = tmp_path / "out" / "checkpoints" / "gdfq.g.ckpt"
    assert run("scatter", "--config", cfg_path, "--generator", g, "--samples", 11, "--grid-res", 3) == 0
    lines = (tmp_path / "out" / "scatter" / "scatter_samples.csv").read_text().splitlines()
    assert len(lines) == 12 and lines[0] == "# x1,x2,label,teacher_class"


def test_output_dir_flag_beats_env(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run("teacher-train", "--config", cfg_path, "--output-dir", tmp_path / "flag") == 0
    assert (tmp_path / "flag" / "teacher.ckpt").exists() and not (tmp_path / "env").exists()


def test_env_output_dir(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run("teacher-train", "--config", cfg_path) == 0
    assert (tmp_path / "env" / "teacher.ckpt").exists()


@pytest.mark.parametrize("argv", [
    ["gdfq", "--config", "/nonexistent/x.ini"],
    ["gdfq", "--set", "eta=5"],
    ["report", "--set", "no_such_option=1"],
])
def test_config_errors_exit_1(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert run(*argv) == 1
    assert "error" in capsys.readouterr().err


def test_missing_generator_checkpoint(cfg_path, tmp_path):
    assert run("scatter", "--config", cfg_path, "--generator", tmp_path / "nope.ckpt") == 1


def test_corrupt_checkpoint(cfg_path, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert run("scatter", "--config", cfg_path, "--generator", bad) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_2(cfg_path):
    assert run("gdfq", "--config", cfg_path, "--set", "lr_q=1e300", "--set", "lr_g=1e300") == 2


def test_bad_verb():
    with pytest.raises(SystemExit):
        run("train-everything")
