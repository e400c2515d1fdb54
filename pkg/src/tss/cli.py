"""Experiment runner CLI: configure streams/variants/seeds, execute sequences,
inspect saved gate and importance files, and compare finished runs.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 I/O error.
The CLI only dispatches and formats; all numbers come from trainer/eval.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import eval as eval_mod
from . import gating, masking
from .model import ModelConfig
from .taskgen import STREAM_KINDS, make_stream
from .trainer import TrainConfig, TrainingAborted, Variant, run_sequence

EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_IO = 4


@dataclass
class StreamConfig:
    kind: str = "heterogeneous"
    n_tasks: int = 10
    input_dim: int = 20
    n_classes: int = 5
    n_train: int = 500
    n_val: int = 100
    n_test: int = 200
    noise_std: float = 0.5
    max_angle: float = 30.0


@dataclass
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variants: list[str] = field(default_factory=lambda: ["tss"])
    seeds: list[int] = field(default_factory=lambda: [1])
    out: str = "runs"


class ConfigError(ValueError):
    pass


def _update_dataclass(cls, base, overrides: dict):
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(overrides) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return dataclasses.replace(base, **overrides)


def load_config(path: str | None, args: argparse.Namespace) -> ExperimentConfig:
    """Config file (JSON) first, then flag overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: "
                              f"line {exc.lineno}, column {exc.colno}") from exc
        unknown = set(raw) - {"stream", "model", "train", "variants", "seeds", "out"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg.stream = _update_dataclass(StreamConfig, cfg.stream, raw.get("stream", {}))
        cfg.model = _update_dataclass(ModelConfig, cfg.model, raw.get("model", {}))
        cfg.train = _update_dataclass(TrainConfig, cfg.train, raw.get("train", {}))
        cfg.variants = list(raw.get("variants", cfg.variants))
        cfg.seeds = [int(s) for s in raw.get("seeds", cfg.seeds)]
        cfg.out = raw.get("out", cfg.out)

    if args.stream is not None:
        cfg.stream = dataclasses.replace(cfg.stream, kind=args.stream)
    if args.tasks is not None:
        cfg.stream = dataclasses.replace(cfg.stream, n_tasks=args.tasks)
    if args.variants is not None:
        cfg.variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if args.seeds is not None:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if args.out is not None:
        cfg.out = args.out
    train_over = {}
    if args.epochs is not None:
        train_over["max_epochs"] = args.epochs
    if args.lr_scores is not None:
        train_over["lr_scores"] = args.lr_scores
    if args.lr_heads is not None:
        train_over["lr_heads"] = args.lr_heads
    if args.threshold is not None:
        train_over["threshold"] = args.threshold
    if train_over:
        cfg.train = dataclasses.replace(cfg.train, **train_over)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.stream.kind not in STREAM_KINDS:
        raise ConfigError(f"stream.kind must be one of {STREAM_KINDS}, "
                          f"got {cfg.stream.kind!r}")
    if cfg.stream.n_tasks < 2:
        raise ConfigError(f"stream.n_tasks must be >= 2, got {cfg.stream.n_tasks}")
    known = [v.value for v in Variant]
    for v in cfg.variants:
        if v not in known:
            raise ConfigError(f"unknown variant {v!r}; choose from {known}")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if cfg.train.max_epochs < 1:
        raise ConfigError("train.max_epochs must be >= 1")
    try:
        cfg.model.validate()
    except ValueError as exc:
        raise ConfigError(f"model config: {exc}") from exc


def config_json(cfg: ExperimentConfig) -> dict:
    return {
        "stream": dataclasses.asdict(cfg.stream),
        "model": dataclasses.asdict(cfg.model),
        "train": dataclasses.asdict(cfg.train),
        "variants": cfg.variants,
        "seeds": cfg.seeds,
        "out": cfg.out,
    }


def _one_run(cfg: ExperimentConfig, variant_name: str, seed: int):
    stream = make_stream(
        cfg.stream.kind, cfg.stream.n_tasks, seed,
        input_dim=cfg.stream.input_dim, n_classes=cfg.stream.n_classes,
        sizes=(cfg.stream.n_train, cfg.stream.n_val, cfg.stream.n_test),
        noise_std=cfg.stream.noise_std, max_angle=cfg.stream.max_angle,
    )
    run_dir = Path(cfg.out) / f"{variant_name}_{cfg.stream.kind}_s{seed}"
    resolved = config_json(cfg)
    resolved["variant"] = variant_name
    resolved["seed"] = seed
    run_dir.mkdir(parents=True, exist_ok=True)
    eval_mod.dump_json(resolved, run_dir / "config.json")
    result = run_sequence(stream, Variant(variant_name), cfg.model, cfg.train, seed,
                          out_dir=run_dir)
    return result.run


def run_command(cfg: ExperimentConfig) -> int:
    jobs = [(v, s) for v in cfg.variants for s in cfg.seeds]
    threads = int(os.environ.get("TSS_THREADS", "1"))
    out_root = Path(cfg.out)
    out_root.mkdir(parents=True, exist_ok=True)
    eval_mod.dump_json(config_json(cfg), out_root / "config.json")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(lambda vs: _one_run(cfg, *vs), jobs))
    else:
        runs = [_one_run(cfg, v, s) for v, s in jobs]
    paths = eval_mod.emit_report(runs, out_root)
    for run in runs:
        fr = eval_mod.forgetting_rate(run.matrices["accuracy"])
        mean_final = sum(run.matrices["accuracy"].final_row()) / cfg.stream.n_tasks
        print(f"{run.variant:16s} seed {run.seed}: mean final acc "
              f"{mean_final:.4f}, FR {fr:+.4f}")
    print(f"report written to {paths['summary']}")
    return 0


def _inspect_gate_file(path: Path) -> list[str]:
    gates = gating.read_gates(path)
    lines = [f"{path.name}: TSSG task {gates.task_id}, CRC OK"]
    for t, frac in zip(gates.tensors, gates.ones_fraction()):
        lines.append(f"  gate tensor {t.shape[0]}x{t.shape[1]}: "
                     f"ones-fraction {frac:.4f}")
    return lines


def _inspect_float_file(path: Path, magic: bytes, label: str) -> list[str]:
    tensors = masking.unpack_floats(path.read_bytes(), magic)
    lines = [f"{path.name}: {label}, CRC OK"]
    for t in tensors:
        lines.append(f"  tensor {t.shape[0]}x{t.shape[1]}: "
                     f"min {t.min():.4g} max {t.max():.4g}")
        if label == "TSSI importance":
            counts, _ = np.histogram(t, bins=10, range=(0.0, 1.0))
            lines.append("  histogram [0,1) in 10 bins: " +
                         " ".join(str(int(c)) for c in counts))
    return lines


def inspect_command(target: str) -> int:
    root = Path(target)
    if root.is_dir():
        files = sorted(root.glob("*.tssg")) + sorted(root.glob("*.tssi")) \
            + sorted(root.glob("*.tssh"))
    else:
        files = [root]
    if not files:
        print(f"no TSSG/TSSI/TSSH files under {target}", file=sys.stderr)
        return EXIT_IO
    status = 0
    for path in files:
        try:
            if path.suffix == ".tssg":
                lines = _inspect_gate_file(path)
            elif path.suffix == ".tssi":
                lines = _inspect_float_file(path, masking.IMPORTANCE_MAGIC,
                                            "TSSI importance")
            elif path.suffix == ".tssh":
                lines = _inspect_float_file(path, masking.HEAD_MAGIC, "TSSH head")
            else:
                raise ValueError(f"unknown artifact type {path.suffix!r}")
            print("\n".join(lines))
        except (OSError, ValueError) as exc:
            print(f"corrupt artifact {path}: {exc}", file=sys.stderr)
            status = EXIT_IO
    return status


def compare_command(run_dirs: list[str], out_path: str | None = None) -> int:
    runs = []
    for d in run_dirs:
        path = Path(d) / "results.json"
        try:
            runs.append(eval_mod.RunResult.from_json(json.loads(path.read_text())))
        except OSError as exc:
            print(f"cannot read {path}: {exc}", file=sys.stderr)
            return EXIT_IO
    # the recipe must match; the per-seed realization (seed, order) may differ
    recipes = {json.dumps({k: v for k, v in r.stream_config.items()
                           if k not in ("seed", "order")}, sort_keys=True)
               for r in runs}
    if len(recipes) > 1:
        print("refusing to compare runs with mismatched stream configs",
              file=sys.stderr)
        return EXIT_CONFIG
    summary = eval_mod.render_summary(runs)
    print(summary, end="")
    target = Path(out_path) if out_path else Path(os.path.commonpath(run_dirs) or ".") \
        / "summary.md"
    target.write_text(summary)
    print(f"summary written to {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tss", description="Continual-learning experiment runner")
    parser.add_argument("--inspect", metavar="PATH",
                        help="inspect saved gate/importance files and exit")
    parser.add_argument("--compare", nargs="+", metavar="DIR",
                        help="compare finished run directories and exit")
    sub = parser.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="execute (variant x seed) sequences")
    run_p.add_argument("--stream", choices=STREAM_KINDS)
    run_p.add_argument("--tasks", type=int)
    run_p.add_argument("--variants", help="comma-separated variant names")
    run_p.add_argument("--seeds", help="comma-separated integer seeds")
    run_p.add_argument("--config", help="JSON config file; flags override it")
    run_p.add_argument("--out", help="output directory (created if missing)")
    run_p.add_argument("--epochs", type=int)
    run_p.add_argument("--lr-scores", type=float, dest="lr_scores")
    run_p.add_argument("--lr-heads", type=float, dest="lr_heads")
    run_p.add_argument("--threshold", type=float)

    ins_p = sub.add_parser("inspect", help="inspect saved artifacts")
    ins_p.add_argument("path")

    cmp_p = sub.add_parser("compare", help="cross-variant summary over run dirs")
    cmp_p.add_argument("run_dirs", nargs="+")
    cmp_p.add_argument("--out", dest="out_path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.inspect is not None:
            return inspect_command(args.inspect)
        if args.compare is not None:
            return compare_command(args.compare)
        if args.command == "run":
            cfg = load_config(args.config, args)
            return run_command(cfg)
        if args.command == "inspect":
            return inspect_command(args.path)
        if args.command == "compare":
            return compare_command(args.run_dirs, args.out_path)
        parser.print_help()
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
