"""Metrics over completed task sequences and report emission.

The central object is the lower-triangular ResultMatrix: values[i][j] is the
metric on task j's test set measured after training task i (j <= i). The
forgetting rate averages, over all tasks but the last, the drop from a task's
own-time performance to its performance after the final task; transfer deltas
compare a method's final per-task performance against the independent-model
control trained on the same stream.
"""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ["variant", "stream_kind", "seed", "task_id", "metric_name",
               "value", "forgetting_rate", "transfer_delta"]


@dataclass
class ResultMatrix:
    metric: str
    values: list[list[float]] = field(default_factory=list)  # row i has i+1 entries

    @property
    def n_tasks(self) -> int:
        return len(self.values)

    def add_row(self, row: list[float]) -> None:
        if len(row) != len(self.values) + 1:
            raise ValueError(f"row {len(self.values)} must have {len(self.values) + 1} "
                             f"entries, got {len(row)}")
        self.values.append([float(v) for v in row])

    def final_row(self) -> list[float]:
        return self.values[-1]

    def to_json(self) -> dict:
        return {"metric": self.metric, "values": self.values}

    @classmethod
    def from_json(cls, obj: dict) -> "ResultMatrix":
        return cls(metric=obj["metric"], values=[list(map(float, r)) for r in obj["values"]])


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    if len(preds) == 0:
        raise ValueError("accuracy of empty predictions")
    return float(np.mean(preds == labels))


def macro_f1(preds: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    """Unweighted mean of per-class F1. A class with no predictions and no
    labels contributes F1 = 0 and still counts in the average."""
    if len(preds) == 0:
        raise ValueError("macro_f1 of empty predictions")
    if len(preds) != len(labels):
        raise ValueError(f"{len(preds)} preds vs {len(labels)} labels")
    f1_sum = 0.0
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        f1_sum += (2 * tp / denom) if denom else 0.0
    return f1_sum / n_classes


def per_task_forgetting(matrix: ResultMatrix) -> list[float]:
    """A[i][i] - A[T][i] for each task i before the last."""
    t = matrix.n_tasks
    if t < 2:
        raise ValueError("forgetting needs at least 2 tasks")
    final = matrix.values[t - 1]
    return [matrix.values[i][i] - final[i] for i in range(t - 1)]


def forgetting_rate(matrix: ResultMatrix) -> float:
    """Mean per-task forgetting; negative values indicate backward transfer."""
    drops = per_task_forgetting(matrix)
    return sum(drops) / len(drops)


def transfer_delta(method: ResultMatrix, one: ResultMatrix) -> tuple[list[float], float]:
    """Per-task (method final - control own-time) and its mean. Positive mean
    on similar streams is the knowledge-transfer signal."""
    if method.n_tasks != one.n_tasks:
        raise ValueError(f"matrix sizes differ: {method.n_tasks} vs {one.n_tasks}")
    t = method.n_tasks
    deltas = [method.values[t - 1][k] - one.values[k][k] for k in range(t)]
    return deltas, sum(deltas) / t


@dataclass
class RunResult:
    """One (variant, seed) sequence run, as persisted in results.json."""

    variant: str
    stream_kind: str
    stream_config: dict
    seed: int
    matrices: dict[str, ResultMatrix]
    eval_digests: list[list[str]] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "config": {
                "variant": self.variant,
                "seed": self.seed,
                "stream": self.stream_config,
                **self.config,
            },
            "matrices": {
                **{name: m.to_json() for name, m in self.matrices.items()},
                "logits_sha256": self.eval_digests,
            },
            "metrics": {
                "final": {name: m.final_row() for name, m in self.matrices.items()},
                "mean_final": {name: sum(m.final_row()) / m.n_tasks
                               for name, m in self.matrices.items()},
                "forgetting_rate": {name: forgetting_rate(m)
                                    for name, m in self.matrices.items()},
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunResult":
        cfg = dict(obj["config"])
        variant = cfg.pop("variant")
        seed = cfg.pop("seed")
        stream = cfg.pop("stream")
        mats = {name: ResultMatrix.from_json(m)
                for name, m in obj["matrices"].items() if name != "logits_sha256"}
        return cls(variant=variant, stream_kind=stream["kind"], stream_config=stream,
                   seed=seed, matrices=mats,
                   eval_digests=obj["matrices"].get("logits_sha256", []), config=cfg)


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _delta_lookup(runs: list[RunResult]) -> dict[tuple[int, str], tuple[list[float], float]]:
    """(seed, metric) -> deltas of each non-control run vs the control ('one')
    run of the same seed. Empty when no control run is present."""
    controls = {(r.seed, name): m for r in runs if r.variant == "one"
                for name, m in r.matrices.items()}
    out = {}
    for r in runs:
        if r.variant == "one":
            continue
        for name, m in r.matrices.items():
            ctrl = controls.get((r.seed, name))
            if ctrl is not None and ctrl.n_tasks == m.n_tasks:
                out[(r.seed, r.variant, name)] = transfer_delta(m, ctrl)
    return out


def write_csv(runs: list[RunResult], path) -> None:
    """Fixed 8-column schema, one row per (variant, seed, task, metric)."""
    deltas = _delta_lookup(runs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in sorted(runs, key=lambda r: (r.variant, r.seed)):
            for name in sorted(r.matrices):
                m = r.matrices[name]
                fr = forgetting_rate(m) if m.n_tasks >= 2 else ""
                per_task = deltas.get((r.seed, r.variant, name), (None, None))[0]
                for k, value in enumerate(m.final_row()):
                    d = "" if per_task is None else repr(per_task[k])
                    writer.writerow([r.variant, r.stream_kind, r.seed, k, name,
                                     repr(value), repr(fr) if fr != "" else "", d])


def emit_report(runs: list[RunResult], out_dir) -> dict[str, Path]:
    """Write results.json (all runs), report.csv (fixed 8-column schema), and
    summary.md (per-variant mean +/- std over seeds)."""
    if not runs:
        raise ValueError("emit_report needs at least one run result")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out / "results.json",
        "csv": out / "report.csv",
        "summary": out / "summary.md",
    }
    dump_json({"runs": [r.to_json() for r in sorted(
        runs, key=lambda r: (r.variant, r.seed))]}, paths["results"])
    write_csv(runs, paths["csv"])
    paths["summary"].write_text(render_summary(runs))
    return paths


def _mean_std(values: list[float]) -> str:
    mean = statistics.fmean(values)
    std = statistics.pstdev(values) if len(values) > 1 else 0.0
    return f"{mean:.4f} ± {std:.4f}"


def render_summary(runs: list[RunResult]) -> str:
    """Cross-variant table of mean +/- std over seeds."""
    deltas = _delta_lookup(runs)
    metrics = sorted({name for r in runs for name in r.matrices})
    variants = sorted({r.variant for r in runs})
    kind = runs[0].stream_kind
    lines = [f"# Variant comparison ({kind} stream, "
             f"{runs[0].matrices[metrics[0]].n_tasks} tasks)", ""]
    header = ["variant", "seeds"]
    for name in metrics:
        header += [f"{name} (mean final)", f"{name} FR", f"{name} Δ vs one"]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for variant in variants:
        group = [r for r in runs if r.variant == variant]
        seeds = sorted(r.seed for r in group)
        row = [variant, ",".join(map(str, seeds))]
        for name in metrics:
            finals = [sum(r.matrices[name].final_row()) / r.matrices[name].n_tasks
                      for r in group]
            frs = [forgetting_rate(r.matrices[name]) for r in group
                   if r.matrices[name].n_tasks >= 2]
            ds = [deltas[(r.seed, variant, name)][1] for r in group
                  if (r.seed, variant, name) in deltas]
            row += [_mean_std(finals), _mean_std(frs) if frs else "—",
                    _mean_std(ds) if ds else "—"]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
