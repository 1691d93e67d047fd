"""Experiment orchestration: teacher, PTQ baselines, GDFQ runs, ablations,
comparison table and decision-boundary scatter export.

Configs are INI files.  ``[experiment]`` holds task and teacher options,
``[train]`` and ``[generator]`` hold defaults shared by every run, and each
``[run:<name>]`` section describes one run.  Keys in a run section other than
``kind``, ``group``, ``method``, ``calibration`` and ``calib_size`` override
``[train]`` for that run.
"""
from __future__ import annotations

import configparser
import copy
import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from gdfq import autodiff as ad
from gdfq import checkpoint
from gdfq.data import Dataset, TeacherConfig, load_csv_dataset, make_toy_dataset, train_teacher
from gdfq.errors import ConfigError, UnsupportedTaskError
from gdfq.generator import Generator, GeneratorConfig, sample_noise_and_labels
from gdfq.layers import Model
from gdfq.quant.calibrate import METHODS
from gdfq.rng import stream
from gdfq.train import (
    TrainConfig,
    evaluate_accuracy,
    gdfq_train,
    inference_mode,
    ptq_quantize,
    real_data_finetune,
)

log = logging.getLogger(__name__)

OUTPUT_ENV = "GDFQ_OUTPUT_DIR"
RUN_KINDS = ("fp32", "ptq", "gdfq", "ft")
GROUPS = ("main", "calibration", "ablation")
CALIB_SOURCES = ("real", "gaussian")
TABLE_COLUMNS = ("run", "kind", "group", "weight_bits", "act_bits", "accuracy")


@dataclass
class RunSpec:
    name: str
    kind: str
    group: str = "main"
    method: str = "minmax"
    calibration: str = "real"
    calib_size: int | None = None
    train: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    task: str = "toy"
    csv_path: str | None = None
    label_column: str = "label"
    n_points: int = 10_000
    seed: int = 0
    output_dir: str = "runs/default"
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    teacher_checkpoint: str | None = None
    train: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    runs: list[RunSpec] = field(default_factory=list)
    scatter_samples: int = 2000
    grid_res: int = 100

    def train_config(self, run: RunSpec) -> TrainConfig:
        opts = {**self.train, **run.train}
        opts["seed"] = run.train.get("seed", self.seed)
        return TrainConfig.from_dict(opts)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)


# ---------------------------------------------------------------- parsing

def coerce_value(value: str):
    v = value.strip()
    low = v.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if "," in v:
        return [coerce_value(p) for p in v.split(",") if p.strip()]
    return v


def _typed_section(section) -> dict:
    return {k: coerce_value(v) for k, v in section.items()}


def _check_keys(opts: dict, allowed: set, where: str) -> None:
    unknown = set(opts) - allowed
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")


def parse_config(text: str, seed: int | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build an ``ExperimentConfig`` from INI text; ``seed`` and ``overrides``
    (train-level keys) take precedence over the file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = ExperimentConfig()
    if cp.has_section("experiment"):
        exp = _typed_section(cp["experiment"])
        teacher_keys = {f"teacher_{f.name}" for f in fields(TeacherConfig) if f.name != "seed"}
        simple = {"task", "csv_path", "label_column", "n_points", "seed", "output_dir",
                  "teacher_checkpoint", "scatter_samples", "grid_res"}
        _check_keys(exp, simple | teacher_keys, "experiment")
        for k in simple & set(exp):
            setattr(cfg, k, exp[k])
        t = {k[len("teacher_"):]: v for k, v in exp.items() if k in teacher_keys}
        if "hidden" in t:
            t["hidden"] = tuple(t["hidden"]) if isinstance(t["hidden"], list) else (t["hidden"],)
        cfg.teacher = TeacherConfig(**t)
    if cp.has_section("train"):
        cfg.train = _typed_section(cp["train"])
    if cp.has_section("generator"):
        g = _typed_section(cp["generator"])
        _check_keys(g, {"noise_dim", "embed_dim", "hidden", "tanh_scale"}, "generator")
        if "hidden" in g and not isinstance(g["hidden"], list):
            g["hidden"] = [g["hidden"]]
        cfg.generator = g
    for sec in cp.sections():
        if not sec.startswith("run:"):
            continue
        opts = _typed_section(cp[sec])
        name = sec[len("run:"):].strip()
        run = RunSpec(name=name, kind=opts.pop("kind", None))
        for key in ("group", "method", "calibration", "calib_size"):
            if key in opts:
                setattr(run, key, opts.pop(key))
        run.train = opts
        cfg.runs.append(run)
    if seed is not None:
        cfg.seed = seed
    if overrides:
        cfg.train.update(overrides)
        for run in cfg.runs:
            run.train.update({k: v for k, v in overrides.items() if k in run.train})
    if os.environ.get(OUTPUT_ENV):
        cfg.output_dir = os.environ[OUTPUT_ENV]
    cfg.teacher.seed = cfg.seed
    validate_config(cfg)
    return cfg


def load_config(path, seed: int | None = None, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), seed, overrides)


def validate_config(cfg: ExperimentConfig) -> None:
    if cfg.task not in ("toy", "csv"):
        raise ConfigError(f"task must be 'toy' or 'csv', got {cfg.task!r}")
    if cfg.task == "csv":
        if not cfg.csv_path:
            raise ConfigError("task=csv needs csv_path")
        if not Path(cfg.csv_path).exists():
            raise ConfigError(f"csv file not found: {cfg.csv_path}")
    cfg.train_config(RunSpec("defaults", "gdfq"))
    names = [r.name for r in cfg.runs]
    if len(set(names)) != len(names):
        raise ConfigError("run names must be unique")
    for r in cfg.runs:
        if r.kind not in RUN_KINDS:
            raise ConfigError(f"run {r.name!r}: kind must be one of {RUN_KINDS}, got {r.kind!r}")
        if r.group not in GROUPS:
            raise ConfigError(f"run {r.name!r}: group must be one of {GROUPS}")
        if r.method not in METHODS:
            raise ConfigError(f"run {r.name!r}: unknown calibration method {r.method!r}")
        if r.calibration not in CALIB_SOURCES:
            raise ConfigError(f"run {r.name!r}: calibration must be one of {CALIB_SOURCES}")
        if r.kind in ("fp32", "ptq") and r.train.keys() - {"weight_bits", "act_bits", "seed"}:
            raise ConfigError(f"run {r.name!r}: training options make no sense for kind={r.kind}")
        cfg.train_config(r)  # raises ConfigError on bad values


# ---------------------------------------------------------------- data / teacher

def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.task == "toy":
        return make_toy_dataset(cfg.seed, cfg.n_points)
    return load_csv_dataset(cfg.csv_path, cfg.label_column, cfg.seed)


def teacher_path(cfg: ExperimentConfig) -> Path:
    return Path(cfg.teacher_checkpoint) if cfg.teacher_checkpoint else cfg.out / "teacher.ckpt"


def obtain_teacher(cfg: ExperimentConfig, data: Dataset, retrain: bool = False) -> Model:
    """Load the configured or cached teacher checkpoint, training one if absent."""
    path = teacher_path(cfg)
    if path.exists() and not retrain:
        return checkpoint.load(path)
    if cfg.teacher_checkpoint:
        raise FileNotFoundError(f"teacher checkpoint not found: {path}")
    model, metrics = train_teacher(data, cfg.teacher)
    checkpoint.save(model, path)
    _write_json(cfg.out / "teacher.json", metrics)
    return model


# ---------------------------------------------------------------- runs

def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def gaussian_calibration_inputs(seed: int, n: int, dim: int) -> np.ndarray:
    """Data-free calibration batch: standard normal inputs."""
    return stream(seed, "gaussian-calibration").standard_normal((n, dim))


def _result(run: RunSpec, tcfg: TrainConfig | None, acc: float, bits=(32, 32), extra=None) -> dict:
    wb, ab = (tcfg.weight_bits, tcfg.act_bits) if tcfg else bits
    out = {"run": run.name, "kind": run.kind, "group": run.group,
           "weight_bits": wb, "act_bits": ab, "accuracy": acc}
    out.update(extra or {})
    return out


def execute_run(cfg: ExperimentConfig, run: RunSpec, data: Dataset, teacher: Model) -> dict:
    """Run one entry of the config; writes its report/checkpoints and returns its table row."""
    xe, ye = data.eval
    xt, yt = data.train
    out = cfg.out
    if run.kind == "fp32":
        return _result(run, None, evaluate_accuracy(teacher, xe, ye))
    tcfg = cfg.train_config(run)
    if run.kind == "ptq":
        n = run.calib_size or len(xt)
        if run.calibration == "real":
            calib = xt[:n]
        else:
            calib = gaussian_calibration_inputs(tcfg.seed, n, data.input_dim)
        Q = ptq_quantize(teacher, calib, run.method, tcfg.weight_bits, tcfg.act_bits)
        checkpoint.save(Q, out / "checkpoints" / f"{run.name}.q.ckpt")
        return _result(run, tcfg, evaluate_accuracy(Q, xe, ye),
                       extra={"method": run.method, "calibration": run.calibration})
    if run.kind == "ft":
        Q, report = real_data_finetune(teacher, xt, yt, tcfg, (xe, ye))
        report.write(out / "reports" / f"{run.name}.jsonl")
        checkpoint.save(Q, out / "checkpoints" / f"{run.name}.q.ckpt")
        return _result(run, tcfg, report.summary["q_eval_acc"])
    gcfg = GeneratorConfig(num_classes=teacher.num_classes, output_dim=teacher.input_dim, **cfg.generator)
    G, Q, report = gdfq_train(teacher, gcfg, tcfg, (xe, ye))
    report.write(out / "reports" / f"{run.name}.jsonl")
    checkpoint.save(Q, out / "checkpoints" / f"{run.name}.q.ckpt")
    checkpoint.save(G, out / "checkpoints" / f"{run.name}.g.ckpt")
    extra = {"generator_agreement": generator_agreement(G, teacher, cfg.scatter_samples, tcfg.seed),
             "q_eval_acc_pre_finetune": report.summary["q_eval_acc_pre_finetune"]}
    if data.input_dim == 2:
        export_boundary_scatter(teacher, G, cfg.scatter_samples, cfg.grid_res, out / "scatter",
                                prefix=run.name, seed=tcfg.seed)
    return _result(run, tcfg, report.summary["q_eval_acc"], extra=extra)


def _execute_isolated(args) -> dict:
    cfg, run = args
    data = load_dataset(cfg)
    return execute_run(cfg, run, data, checkpoint.load(teacher_path(cfg)))


def run_experiment(cfg: ExperimentConfig, groups=None, kinds=None, jobs: int = 1) -> list[dict]:
    """Execute the selected runs, then rebuild the comparison table from every
    result present in the output directory."""
    data = load_dataset(cfg)
    teacher = obtain_teacher(cfg, data)
    selected = [r for r in cfg.runs
                if (groups is None or r.group in groups) and (kinds is None or r.kind in kinds)]
    if jobs > 1 and len(selected) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_execute_isolated, [(cfg, r) for r in selected]))
    else:
        rows = [execute_run(cfg, r, data, teacher) for r in selected]
    for row in rows:
        _write_json(cfg.out / "results" / f"{row['run']}.json", row)
    write_comparison(cfg, data, teacher)
    return rows


def write_comparison(cfg: ExperimentConfig, data: Dataset | None = None, teacher: Model | None = None) -> Path:
    """``comparison.csv`` from all stored run results; the FP32 teacher row is always present."""
    if data is None:
        data = load_dataset(cfg)
    if teacher is None:
        teacher = obtain_teacher(cfg, data)
    rows = []
    res_dir = cfg.out / "results"
    if res_dir.exists():
        rows = [json.loads(p.read_text()) for p in sorted(res_dir.glob("*.json"))]
    if not any(r["kind"] == "fp32" for r in rows):
        rows.insert(0, {"run": "fp32", "kind": "fp32", "group": "main", "weight_bits": 32,
                        "act_bits": 32, "accuracy": evaluate_accuracy(teacher, *data.eval)})
    order = {r.name: i for i, r in enumerate(cfg.runs)}
    rows.sort(key=lambda r: (r["kind"] != "fp32", order.get(r["run"], len(order)), r["run"]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([r[c] if c != "accuracy" else f"{r[c]:.6f}" for c in TABLE_COLUMNS])
    path = cfg.out / "comparison.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_comparison(path) -> dict[str, dict]:
    with Path(path).open(newline="") as fh:
        return {r["run"]: {**r, "accuracy": float(r["accuracy"])} for r in csv.DictReader(fh)}


# ---------------------------------------------------------------- scatter

def generator_agreement(G: Generator, teacher: Model, n: int, seed: int) -> float:
    """Fraction of generated samples the teacher assigns to their conditioning label."""
    x, y = _generated(G, n, seed)
    with inference_mode(teacher):
        pred = teacher.forward(x).data.argmax(axis=1)
    return float(np.mean(pred == y))


def _generated(G: Generator, n: int, seed: int):
    z, y = sample_noise_and_labels(stream(seed, "scatter-samples"), n, G.cfg.num_classes, G.cfg.noise_dim)
    # G normalizes with batch statistics even here; work on a copy so its
    # (unused) running statistics stay untouched
    with ad.no_grad():
        x = copy.deepcopy(G)(z, y).data
    return x, y


def export_boundary_scatter(
    model: Model,
    G: Generator | None,
    n_samples: int,
    grid_res: int,
    out_dir,
    prefix: str = "scatter",
    seed: int = 0,
    bounds: tuple[float, float] = (-4.0, 4.0),
) -> list[Path]:
    """Grid of teacher decisions and, given ``G``, labelled generated samples."""
    if model.input_dim != 2:
        raise UnsupportedTaskError(f"scatter export needs 2-D inputs, model takes {model.input_dim}")
    if grid_res < 1 or n_samples < 0:
        raise ConfigError("grid_res must be >= 1 and n_samples >= 0")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    axis = np.linspace(bounds[0], bounds[1], grid_res)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    with inference_mode(model):
        cls = model.forward(grid).data.argmax(axis=1)
    paths = [out_dir / f"{prefix}_grid.csv"]
    _write_rows(paths[0], "x1,x2,teacher_class", zip(grid[:, 0], grid[:, 1], cls))
    if G is not None and n_samples > 0:
        x, y = _generated(G, n_samples, seed)
        with inference_mode(model):
            pred = model.forward(x).data.argmax(axis=1)
        paths.append(out_dir / f"{prefix}_samples.csv")
        _write_rows(paths[1], "x1,x2,label,teacher_class", zip(x[:, 0], x[:, 1], y, pred))
    return paths


def _write_rows(path: Path, schema: str, rows) -> None:
    with path.open("w") as fh:
        fh.write(f"# {schema}\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(int(v))
                              for v in row) + "\n")


def read_scatter(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


__all__ = [
    "ExperimentConfig",
    "RunSpec",
    "execute_run",
    "export_boundary_scatter",
    "generator_agreement",
    "load_config",
    "obtain_teacher",
    "parse_config",
    "read_comparison",
    "read_scatter",
    "run_experiment",
    "write_comparison",
]
