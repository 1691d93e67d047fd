from __future__ import annotations

import json

import numpy as np
import pytest

from gdfq import checkpoint
from gdfq.errors import ConfigError, UnsupportedTaskError
from gdfq.experiments import (
    OUTPUT_ENV,
    coerce_value,
    export_boundary_scatter,
    load_config,
    parse_config,
    read_comparison,
    read_scatter,
    run_experiment,
)
from gdfq.generator import Generator, GeneratorConfig
from gdfq.layers import build_mlp
from gdfq.rng import stream

TINY = """
[experiment]
task = toy
n_points = 600
output_dir = {out}
teacher_hidden = 8, 8
teacher_epochs = 3
teacher_batch_size = 64
scatter_samples = 50
grid_res = 7

[train]
epochs = 3
iters_per_epoch = 2
warmup_iters = 2
batch_size = 16
range_freeze_epochs = 1

[generator]
noise_dim = 8
hidden = 16
tanh_scale = 4.0

[run:ptq-minmax]
kind = ptq
calib_size = 100

[run:gdfq]
kind = gdfq

[run:gdfq-w8]
kind = gdfq
group = ablation
weight_bits = 8
"""


@pytest.fixture
def tiny_cfg(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    path = tmp_path / "tiny.ini"
    path.write_text(TINY.format(out=tmp_path / "out"))
    return path


class TestCoerce:
    @pytest.mark.parametrize("text,value", [
        ("3", 3), ("0.5", 0.5), ("1e-4", 1e-4), ("true", True), ("Off", False), ("none", None),
        ("16, 32", [16, 32]), ("alternating", "alternating"),
    ])
    def test_values(self, text, value):
        assert coerce_value(text) == value


class TestParse:
    def test_defaults(self, monkeypatch):
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        cfg = parse_config("")
        assert cfg.task == "toy" and cfg.runs == [] and cfg.seed == 0

    def test_sections(self, tiny_cfg):
        cfg = load_config(tiny_cfg)
        assert [r.name for r in cfg.runs] == ["ptq-minmax", "gdfq", "gdfq-w8"]
        assert cfg.teacher.hidden == (8, 8) and cfg.generator["hidden"] == [16]
        assert cfg.train_config(cfg.runs[2]).weight_bits == 8
        assert cfg.train_config(cfg.runs[1]).weight_bits == 4

    def test_seed_override(self, tiny_cfg):
        cfg = load_config(tiny_cfg, seed=9)
        assert cfg.seed == 9 and cfg.teacher.seed == 9 and cfg.train_config(cfg.runs[1]).seed == 9

    def test_overrides_reach_runs(self, tiny_cfg):
        cfg = load_config(tiny_cfg, overrides={"weight_bits": 3})
        assert all(cfg.train_config(r).weight_bits == 3 for r in cfg.runs)

    def test_env_output_dir(self, tiny_cfg, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        assert load_config(tiny_cfg).output_dir == str(tmp_path / "env")

    @pytest.mark.parametrize("text", [
        "[experiment]\ntask = imagenet\n",
        "[experiment]\ntask = csv\n",
        "[experiment]\nbogus = 1\n",
        "[train]\nepochs = 0\n",
        "[train]\nunknown_knob = 1\n",
        "[run:a]\nkind = magic\n",
        "[run:a]\nkind = ptq\nmethod = histogram\n",
        "[run:a]\nkind = ptq\nepochs = 3\n",
        "[run:a]\nkind = gdfq\neta = 2.0\n",
        "[generator]\ndepth = 3\n",
        "not an ini file",
    ])
    def test_rejects(self, text, monkeypatch):
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.ini")


class TestRun:
    def test_main_group(self, tiny_cfg):
        cfg = load_config(tiny_cfg)
        rows = run_experiment(cfg, groups=("main",))
        assert [r["run"] for r in rows] == ["ptq-minmax", "gdfq"]
        out = cfg.out
        assert (out / "teacher.ckpt").exists() and (out / "reports" / "gdfq.jsonl").exists()
        table = read_comparison(out / "comparison.csv")
        assert set(table) == {"fp32", "ptq-minmax", "gdfq"}
        assert table["fp32"]["weight_bits"] == "32"
        assert 0.0 <= table["gdfq"]["accuracy"] <= 1.0
        grid = read_scatter(out / "scatter" / "gdfq_grid.csv")
        samples = read_scatter(out / "scatter" / "gdfq_samples.csv")
        assert grid.shape == (49, 3) and samples.shape == (50, 4)
        result = json.loads((out / "results" / "gdfq.json").read_text())
        assert 0.0 <= result["generator_agreement"] <= 1.0

    def test_repeat_is_byte_identical(self, tiny_cfg, tmp_path):
        blobs = []
        for sub in ("a", "b"):
            cfg = load_config(tiny_cfg)
            cfg.output_dir = str(tmp_path / sub)
            run_experiment(cfg, groups=("main",))
            blobs.append([(cfg.out / p).read_bytes() for p in (
                "comparison.csv", "reports/gdfq.jsonl", "checkpoints/gdfq.q.ckpt", "scatter/gdfq_samples.csv")])
        assert blobs[0] == blobs[1]

    def test_parallel_matches_serial(self, tiny_cfg, tmp_path):
        out = []
        for sub, jobs in (("s", 1), ("p", 2)):
            cfg = load_config(tiny_cfg)
            cfg.output_dir = str(tmp_path / sub)
            run_experiment(cfg, jobs=jobs)
            out.append((cfg.out / "comparison.csv").read_bytes())
        assert out[0] == out[1]

    def test_teacher_cached(self, tiny_cfg):
        cfg = load_config(tiny_cfg)
        run_experiment(cfg, kinds=("ptq",))
        first = (cfg.out / "teacher.ckpt").read_bytes()
        run_experiment(cfg, kinds=("ptq",))
        assert (cfg.out / "teacher.ckpt").read_bytes() == first

    def test_missing_teacher_checkpoint(self, tiny_cfg, tmp_path):
        cfg = load_config(tiny_cfg)
        cfg.teacher_checkpoint = str(tmp_path / "none.ckpt")
        with pytest.raises(FileNotFoundError):
            run_experiment(cfg)


class TestScatter:
    def test_rows_and_labels(self, small_mlp, tmp_path):
        G = Generator(GeneratorConfig(3, 2, noise_dim=4, hidden=[8]), stream(0, "g"))
        paths = export_boundary_scatter(small_mlp, G, 30, 5, tmp_path, seed=1)
        grid, samples = read_scatter(paths[0]), read_scatter(paths[1])
        assert grid.shape == (25, 3) and samples.shape == (30, 4)
        assert set(np.unique(grid[:, 2])) <= {0, 1, 2}
        assert np.array_equal(samples[:, 3], small_mlp.predict(samples[:, :2]))
        assert grid[:, :2].min() == -4.0 and grid[:, :2].max() == 4.0

    def test_generator_state_untouched(self, small_mlp, tmp_path):
        G = Generator(GeneratorConfig(3, 2, noise_dim=4, hidden=[8]), stream(0, "g"))
        before = checkpoint.dumps(G)
        export_boundary_scatter(small_mlp, G, 30, 5, tmp_path)
        assert checkpoint.dumps(G) == before

    def test_grid_only(self, small_mlp, tmp_path):
        assert len(export_boundary_scatter(small_mlp, None, 30, 4, tmp_path)) == 1

    def test_non_2d_task(self, tmp_path):
        m = build_mlp(3, [4], 2, stream(0, "m"))
        with pytest.raises(UnsupportedTaskError):
            export_boundary_scatter(m, None, 10, 4, tmp_path)
