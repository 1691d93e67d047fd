"""Command-line entry point: ``gdfq <verb> --config FILE [--seed N] ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from gdfq import checkpoint
from gdfq.errors import CheckpointError, ConfigError, NumericError, UnsupportedTaskError
from gdfq.experiments import (
    ExperimentConfig,
    RunSpec,
    coerce_value,
    export_boundary_scatter,
    load_config,
    load_dataset,
    obtain_teacher,
    parse_config,
    run_experiment,
    write_comparison,
)
from gdfq.quant.calibrate import METHODS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
VERBS = ("teacher-train", "quantize", "gdfq", "calibrate", "ablate", "scatter", "report")


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdfq", description="Generative data-free quantization experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", type=Path, help="INI experiment config (defaults apply if omitted)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", type=Path, help="overrides the config and GDFQ_OUTPUT_DIR")
        sp.add_argument("--weight-bits", type=int)
        sp.add_argument("--act-bits", type=int)
        sp.add_argument("--set", type=_kv, action="append", default=[], metavar="KEY=VALUE",
                        help="override a [train] option; repeatable")
        sp.add_argument("--jobs", type=int, default=1, help="runs executed in parallel processes")
        if verb == "quantize":
            sp.add_argument("--method", choices=METHODS, help="run a single PTQ calibration")
            sp.add_argument("--calibration", choices=("real", "gaussian"), default="real")
        if verb == "scatter":
            sp.add_argument("--generator", type=Path, help="generator checkpoint")
            sp.add_argument("--samples", type=int)
            sp.add_argument("--grid-res", type=int)
        if verb == "report":
            sp.add_argument("--run-all", action="store_true", help="execute every configured run first")
    return p


def _load(args) -> ExperimentConfig:
    overrides = {k: coerce_value(v) for k, v in args.set}
    if args.weight_bits is not None:
        overrides["weight_bits"] = args.weight_bits
    if args.act_bits is not None:
        overrides["act_bits"] = args.act_bits
    if args.config is not None:
        cfg = load_config(args.config, args.seed, overrides)
    else:
        cfg = parse_config("", args.seed, overrides)
    if args.output_dir is not None:
        cfg.output_dir = str(args.output_dir)
    return cfg


def _print_rows(rows) -> None:
    for r in rows:
        print(json.dumps(r, sort_keys=True))


def _ensure_runs(cfg: ExperimentConfig, kind: str, group: str, defaults: list[RunSpec]) -> None:
    if not any(r.kind == kind and r.group == group for r in cfg.runs):
        cfg.runs.extend(defaults)


def dispatch(args) -> int:
    cfg = _load(args)
    if args.verb == "teacher-train":
        data = load_dataset(cfg)
        obtain_teacher(cfg, data, retrain=True)
        print((cfg.out / "teacher.json").read_text(), end="")
        return EXIT_OK
    if args.verb == "quantize":
        if args.method:
            cfg.runs = [RunSpec(f"ptq-{args.method}-{args.calibration}", "ptq", method=args.method,
                                calibration=args.calibration)]
            _print_rows(run_experiment(cfg))
        else:
            _print_rows(run_experiment(cfg, groups=("main",), kinds=("ptq", "ft")))
        return EXIT_OK
    if args.verb == "gdfq":
        _ensure_runs(cfg, "gdfq", "main", [RunSpec("gdfq", "gdfq")])
        _print_rows(run_experiment(cfg, groups=("main",), kinds=("gdfq",), jobs=args.jobs))
        return EXIT_OK
    if args.verb == "calibrate":
        if not any(r.group == "calibration" for r in cfg.runs):
            cfg.runs.extend(RunSpec(f"calib-{m}", "ptq", group="calibration", method=m) for m in METHODS)
        _print_rows(run_experiment(cfg, groups=("calibration",)))
        return EXIT_OK
    if args.verb == "ablate":
        if not any(r.group == "ablation" for r in cfg.runs):
            raise ConfigError("no [run:...] sections with group = ablation in the config")
        _print_rows(run_experiment(cfg, groups=("ablation",), jobs=args.jobs))
        return EXIT_OK
    if args.verb == "scatter":
        data = load_dataset(cfg)
        teacher = obtain_teacher(cfg, data)
        G = checkpoint.load(args.generator) if args.generator else None
        paths = export_boundary_scatter(
            teacher, G,
            args.samples if args.samples is not None else cfg.scatter_samples,
            args.grid_res if args.grid_res is not None else cfg.grid_res,
            cfg.out / "scatter", seed=cfg.seed,
        )
        for path in paths:
            print(path)
        return EXIT_OK
    if args.verb == "report":
        if args.run_all:
            run_experiment(cfg, jobs=args.jobs)
        path = write_comparison(cfg)
        print(path.read_text(), end="")
        return EXIT_OK
    raise ConfigError(f"unknown verb {args.verb!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, FileNotFoundError, CheckpointError, UnsupportedTaskError) as exc:
        print(f"gdfq: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"gdfq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
