"""Per-task training pipeline and sequence runner for all method variants.

Each task runs two phases: (A) training of the task's sub-network (popup
scores thresholded into gates at every step, straight-through gradients,
soft-masked by accumulated importance where the variant calls for it) and
(B) a read-only importance pass over the task's training data, normalized and
folded into the running accumulation. Baselines reuse the same loop with
pieces switched off; two variants train the adapter weights directly instead
of scores and therefore forget.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import eval as eval_mod
from . import gating, masking
from . import model as model_mod
from .masking import HEAD_MAGIC, ImportanceMap, pack_floats
from .model import GatedModel, ModelConfig, ScoreSet
from .taskgen import TaskData, TaskStream, materialize
from .tensor import Matrix, Rng, make_rng

NS_MODEL, NS_HEAD, NS_TRAIN = 0, 1, 2
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_EPOCHS = 3


class Variant(str, Enum):
    TSS = "tss"                         # discovery + soft-mask + carry-over init
    TSS_WO_SD = "tss_wo_sd"             # no discovery: train adapters, soft-masked
    TSS_WO_SM = "tss_wo_sm"             # discovery, fresh score init every task
    TSS_WO_SM_NAIVE = "tss_wo_sm_naive" # discovery, carry-over init, no soft-mask
    ONE = "one"                         # independent model per task
    NCL = "ncl"                         # shared trainable adapters, no mechanism

    @property
    def trains_adapters(self) -> bool:
        return self in (Variant.TSS_WO_SD, Variant.NCL)

    @property
    def carries_scores(self) -> bool:
        return self in (Variant.TSS, Variant.TSS_WO_SM_NAIVE)

    @property
    def soft_masks(self) -> bool:
        return self in (Variant.TSS, Variant.TSS_WO_SD)

    @property
    def fresh_model_per_task(self) -> bool:
        return self is Variant.ONE


@dataclass(frozen=True)
class TrainConfig:
    lr_scores: float = 1e-2      # also the adapter-weight rate for no-discovery variants
    lr_heads: float = 1e-2
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    min_epochs: int = 10         # patience only engages after this floor
    threshold: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-2
    mask_update: bool = False    # soft-mask the optimizer update instead of the raw gradient
    importance_batch_size: int | None = None   # None: one full-data batch


class TrainingAborted(RuntimeError):
    """Raised when a task's loss goes non-finite or diverges."""


class Adam:
    """Adam with decoupled weight decay fixed at zero; state is per task."""

    def __init__(self, tensors: list[Matrix], lr: float, beta1: float, beta2: float,
                 eps: float):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t) for t in tensors]
        self.v = [np.zeros_like(t) for t in tensors]
        self.t = 0

    def step(self, params: list[Matrix], grads: list[Matrix],
             update_scale: list[Matrix] | None = None) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[i] / bc1) / (np.sqrt(self.v[i] / bc2) + self.eps)
            if update_scale is not None:
                update = update_scale[i] * update
            p -= update


@dataclass
class TrainReport:
    task_id: int
    variant: str
    epochs_run: int
    train_loss: float
    train_acc: float
    val_acc: float
    best_epoch: int
    wall_time_s: float
    gate_ones_fraction: float | None
    gate_ones_per_tensor: list[float] | None
    score_digests: list[str] = field(default_factory=list)
    importance_stats: dict | None = None

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in (
            "task_id", "variant", "epochs_run", "train_loss", "train_acc", "val_acc",
            "best_epoch", "wall_time_s", "gate_ones_fraction", "gate_ones_per_tensor",
            "score_digests", "importance_stats")}


@dataclass
class TaskOutcome:
    scores: ScoreSet | None
    gates: gating.GateSet | None
    report: TrainReport


def _evaluate(model: GatedModel, task_id: int, gates, x: Matrix, y: np.ndarray):
    logits, _ = model_mod.forward(model, task_id, x, gates)
    preds = model_mod.predictions(logits)
    return logits, preds, eval_mod.accuracy(preds, y)


def train_task(model: GatedModel, variant: Variant, data: TaskData,
               acc_importance: ImportanceMap, prev_scores: ScoreSet | None,
               cfg: TrainConfig, rng: Rng) -> TaskOutcome:
    """Train one task and return its final scores/gates plus a report.

    Gates are recomputed from the scores at every step so they track the
    scores continuously. Early stopping restores the best-validation snapshot
    of the trainable tensors.
    """
    t0 = time.perf_counter()
    task = data.spec.task_id
    head = model.heads[task]

    if variant.trains_adapters:
        scores = None
        params = [t for a in model.adapters for t in (a.w_down, a.w_up)]
    else:
        fresh = (not variant.carries_scores) or prev_scores is None
        scores = masking.init_scores(0 if fresh else 1, model.gated_shapes(), rng,
                                     prev=prev_scores, task_id=task)
        params = scores.tensors

    opt_main = Adam(params, cfg.lr_scores, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_head = Adam([head.w, head.b], cfg.lr_heads, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def current_gates():
        return gating.threshold(scores, cfg.threshold) if scores is not None else None

    logits0, _ = model_mod.forward(model, task, data.x_train, current_gates())
    initial_loss = model_mod.head_loss(logits0, data.y_train)

    n = len(data.y_train)
    best_val, best_epoch, best_state, bad = -np.inf, -1, None, 0
    diverge_streak = 0
    digests: list[str] = []
    epochs_run = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, trace = model_mod.forward(model, task, data.x_train[idx], current_gates())
            grads = model_mod.backward(model, trace, data.y_train[idx])
            g_main = grads.score if scores is not None else grads.eff_weight
            scale = None
            if variant.soft_masks:
                if cfg.mask_update:
                    scale = [1.0 - t for t in acc_importance.tensors]
                else:
                    g_main = masking.soft_mask(g_main, acc_importance)
            opt_main.step(params, g_main, scale)
            opt_head.step([head.w, head.b], [grads.head_w, grads.head_b])
        epochs_run = epoch + 1

        gates = current_gates()
        train_logits, _, _ = _evaluate(model, task, gates, data.x_train, data.y_train)
        train_loss = model_mod.head_loss(train_logits, data.y_train)
        _, _, val_acc = _evaluate(model, task, gates, data.x_val, data.y_val)
        if scores is not None:
            digests.append(scores.digest())

        if not np.isfinite(train_loss):
            raise TrainingAborted(
                f"task {task} ({variant.value}): non-finite loss at epoch {epoch}")
        diverge_streak = diverge_streak + 1 if train_loss > DIVERGENCE_FACTOR * initial_loss else 0
        if diverge_streak >= DIVERGENCE_EPOCHS:
            raise TrainingAborted(
                f"task {task} ({variant.value}): loss {train_loss:.4g} stayed above "
                f"{DIVERGENCE_FACTOR}x the initial loss {initial_loss:.4g} for "
                f"{DIVERGENCE_EPOCHS} epochs")

        if val_acc > best_val:
            best_val, best_epoch, bad = val_acc, epoch, 0
            best_state = ([p.copy() for p in params], head.w.copy(), head.b.copy())
        else:
            bad += 1
            if bad >= cfg.patience and epoch + 1 >= cfg.min_epochs:
                break

    saved_params, saved_w, saved_b = best_state
    for p, sp in zip(params, saved_params):
        p[...] = sp
    head.w[...] = saved_w
    head.b[...] = saved_b

    gates = current_gates()
    train_logits, _, train_acc = _evaluate(model, task, gates, data.x_train, data.y_train)
    train_loss = model_mod.head_loss(train_logits, data.y_train)
    _, _, val_acc = _evaluate(model, task, gates, data.x_val, data.y_val)

    ones_all = ones_per = None
    if gates is not None:
        per = gates.ones_fraction()
        ones_per = per
        ones_all = float(sum(t.sum() for t in gates.tensors) / gates.total())
    report = TrainReport(
        task_id=task, variant=variant.value, epochs_run=epochs_run,
        train_loss=train_loss, train_acc=train_acc, val_acc=val_acc,
        best_epoch=best_epoch, wall_time_s=time.perf_counter() - t0,
        gate_ones_fraction=ones_all, gate_ones_per_tensor=ones_per,
        score_digests=digests,
    )
    return TaskOutcome(scores=scores, gates=gates, report=report)


def finish_task(model: GatedModel, variant: Variant, scores: ScoreSet | None,
                data: TaskData, acc_importance: ImportanceMap,
                cfg: TrainConfig) -> ImportanceMap:
    """Importance pass over the just-finished task's training data, then fold
    into the running accumulation. Leaves all training state untouched."""
    gates = gating.threshold(scores, cfg.threshold) if scores is not None else None
    target = "weights" if variant.trains_adapters else "scores"
    batch = cfg.importance_batch_size or len(data.y_train)
    raw = masking.compute_importance(model, data.spec.task_id, data.x_train,
                                     data.y_train, gates, batch, target)
    return masking.accumulate(acc_importance, masking.normalize(raw))


def _logits_digest(logits: Matrix) -> str:
    return hashlib.sha256(np.ascontiguousarray(logits).tobytes()).hexdigest()


@dataclass
class SequenceResult:
    run: eval_mod.RunResult
    reports: list[TrainReport]


def _stream_config(stream: TaskStream) -> dict:
    first = stream.tasks[0]
    return {
        "kind": stream.kind, "n_tasks": stream.n_tasks, "seed": stream.seed,
        "input_dim": first.input_dim, "n_classes": first.n_classes,
        "n_train": first.n_train, "n_val": first.n_val, "n_test": first.n_test,
        "noise_std": first.noise_std, "order": list(stream.order),
    }


def run_sequence(stream: TaskStream, variant: Variant, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, seed: int,
                 out_dir: str | Path | None = None) -> SequenceResult:
    """Train every task in order; after task i, re-evaluate tasks 0..i with
    their saved gates and heads, filling row i of the result matrices."""
    datasets = [materialize(spec) for spec in stream.tasks]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    shared_model = None
    if not variant.fresh_model_per_task:
        shared_model = model_mod.build(model_cfg, make_rng(seed, NS_MODEL))
    task_models: list[GatedModel] = []

    shapes = [(model_cfg.hidden_dim, model_cfg.bottleneck_dim),
              (model_cfg.bottleneck_dim, model_cfg.hidden_dim)] * model_cfg.n_layers
    acc_imp = masking.zeros(shapes)
    prev_scores: ScoreSet | None = None
    saved_gates: list[gating.GateSet | None] = []
    acc_matrix = eval_mod.ResultMatrix("accuracy")
    mf1_matrix = eval_mod.ResultMatrix("macro_f1")
    digests: list[list[str]] = []
    reports: list[TrainReport] = []

    for i, data in enumerate(datasets):
        if variant.fresh_model_per_task:
            model = model_mod.build(model_cfg, make_rng(seed, NS_MODEL, i + 1))
        else:
            model = shared_model
        task_models.append(model)
        model.add_head(i, data.spec.n_classes, make_rng(seed, NS_HEAD, i))

        frozen_before = None if variant.trains_adapters else model.frozen_digest()
        outcome = train_task(model, variant, data, acc_imp, prev_scores, train_cfg,
                             make_rng(seed, NS_TRAIN, i))
        if frozen_before is not None and model.frozen_digest() != frozen_before:
            raise TrainingAborted(
                f"frozen parameters changed while training task {i} ({variant.value})")

        if variant.soft_masks:
            acc_imp = finish_task(model, variant, outcome.scores, data, acc_imp, train_cfg)
            outcome.report.importance_stats = {
                "mean": [float(t.mean()) for t in acc_imp.tensors],
                "max": [float(t.max()) for t in acc_imp.tensors],
            }
            if out is not None:
                masking.write_importance(out / "importance.tssi", acc_imp)
        prev_scores = outcome.scores
        saved_gates.append(outcome.gates)
        reports.append(outcome.report)

        if out is not None:
            if outcome.gates is not None:
                gating.write_gates(out / f"gates_task{i:03d}.tssg", outcome.gates)
            head = model.heads[i]
            (out / f"head_task{i:03d}.tssh").write_bytes(
                pack_floats([head.w, head.b], HEAD_MAGIC))

        acc_row, mf1_row, digest_row = [], [], []
        for j in range(i + 1):
            eval_model = task_models[j] if variant.fresh_model_per_task else model
            logits, preds, acc = _evaluate(eval_model, j, saved_gates[j],
                                           datasets[j].x_test, datasets[j].y_test)
            acc_row.append(acc)
            mf1_row.append(eval_mod.macro_f1(preds, datasets[j].y_test,
                                             datasets[j].spec.n_classes))
            digest_row.append(_logits_digest(logits))
        acc_matrix.add_row(acc_row)
        mf1_matrix.add_row(mf1_row)
        digests.append(digest_row)

    run = eval_mod.RunResult(
        variant=variant.value, stream_kind=stream.kind,
        stream_config=_stream_config(stream), seed=seed,
        matrices={"accuracy": acc_matrix, "macro_f1": mf1_matrix},
        eval_digests=digests,
        config={
            "model": {"input_dim": model_cfg.input_dim, "hidden_dim": model_cfg.hidden_dim,
                      "n_layers": model_cfg.n_layers,
                      "bottleneck_dim": model_cfg.bottleneck_dim},
            "train": {k: getattr(train_cfg, k) for k in (
                "lr_scores", "lr_heads", "batch_size", "max_epochs", "patience",
                "min_epochs", "threshold", "beta1", "beta2", "adam_eps",
                "mask_update", "importance_batch_size")},
        },
    )
    if out is not None:
        eval_mod.dump_json(run.to_json(), out / "results.json")
        eval_mod.write_csv([run], out / "report.csv")
        eval_mod.dump_json({"reports": [r.to_json() for r in reports]},
                           out / "train_report.json")
    return SequenceResult(run=run, reports=reports)
