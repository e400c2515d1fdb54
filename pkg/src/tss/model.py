"""Frozen MLP backbone with frozen bottleneck adapters and per-task heads.

The backbone and adapters are initialized once and never trained (except by
variants that deliberately train the adapters). Each hidden layer is followed
by a residual bottleneck adapter whose two weight matrices are the only gated
tensors. Backpropagation is written out by hand and produces gradients with
respect to the effective (gated) adapter weights, the popup scores, and the
active task head; the backbone never receives a gradient.

Gated tensor order used everywhere (scores, gates, importance, gradients):
adapter 0 w_down, adapter 0 w_up, adapter 1 w_down, ...
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import gating
from .tensor import Matrix, Rng, ShapeError, randn


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 20
    hidden_dim: int = 128
    n_layers: int = 2
    bottleneck_dim: int = 16

    def validate(self) -> None:
        for name in ("input_dim", "hidden_dim", "n_layers", "bottleneck_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class Adapter:
    w_down: Matrix   # (hidden, bottleneck)
    b_down: Matrix   # (1, bottleneck)
    w_up: Matrix     # (bottleneck, hidden)
    b_up: Matrix     # (1, hidden)


@dataclass
class Head:
    w: Matrix        # (hidden, n_classes)
    b: Matrix        # (1, n_classes)


@dataclass
class ScoreSet:
    """Trainable popup scores, one tensor per gated adapter weight tensor."""

    task_id: int
    tensors: list[Matrix]

    def copy(self, task_id: int | None = None) -> "ScoreSet":
        return ScoreSet(
            task_id=self.task_id if task_id is None else task_id,
            tensors=[t.copy() for t in self.tensors],
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.tensors:
            h.update(np.ascontiguousarray(t).tobytes())
        return h.hexdigest()


@dataclass
class ForwardTrace:
    """Everything backward needs: per-layer inputs/pre-activations and the
    adapter intermediates, plus the effective weights actually used."""

    task_id: int
    layer_in: list[Matrix] = field(default_factory=list)
    pre: list[Matrix] = field(default_factory=list)
    hidden: list[Matrix] = field(default_factory=list)     # relu(pre), adapter input
    down_pre: list[Matrix] = field(default_factory=list)
    down_act: list[Matrix] = field(default_factory=list)
    eff_down: list[Matrix] = field(default_factory=list)
    eff_up: list[Matrix] = field(default_factory=list)
    head_in: Matrix | None = None
    logits: Matrix | None = None


@dataclass
class Gradients:
    eff_weight: list[Matrix]   # d loss / d effective adapter weights
    score: list[Matrix]        # eff_weight * frozen weight (straight-through)
    head_w: Matrix
    head_b: Matrix


class GatedModel:
    def __init__(self, config: ModelConfig, layers, adapters):
        self.config = config
        self.layers = layers            # list of (w, b), frozen
        self.adapters = adapters        # list of Adapter, frozen (except w/o-SD)
        self.heads: dict[int, Head] = {}

    def gated_tensors(self) -> list[Matrix]:
        out = []
        for a in self.adapters:
            out.extend([a.w_down, a.w_up])
        return out

    def gated_shapes(self) -> list[tuple[int, int]]:
        return [t.shape for t in self.gated_tensors()]

    def add_head(self, task_id: int, n_classes: int, rng: Rng) -> Head:
        hidden = self.config.hidden_dim
        head = Head(
            w=randn(rng, hidden, n_classes, np.sqrt(2.0 / hidden)),
            b=np.zeros((1, n_classes)),
        )
        self.heads[task_id] = head
        return head

    def frozen_digest(self) -> str:
        """Hex digest over backbone + adapter bytes; heads excluded."""
        h = hashlib.sha256()
        for w, b in self.layers:
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        for a in self.adapters:
            for t in (a.w_down, a.b_down, a.w_up, a.b_up):
                h.update(np.ascontiguousarray(t).tobytes())
        return h.hexdigest()

    def backbone_digest(self) -> str:
        h = hashlib.sha256()
        for w, b in self.layers:
            h.update(np.ascontiguousarray(w).tobytes())
            h.update(np.ascontiguousarray(b).tobytes())
        return h.hexdigest()


def build(config: ModelConfig, rng: Rng) -> GatedModel:
    """Fan-in-scaled normal init (std = sqrt(2/fan_in)), biases zero, then frozen."""
    config.validate()
    layers, adapters = [], []
    in_dim = config.input_dim
    for _ in range(config.n_layers):
        w = randn(rng, in_dim, config.hidden_dim, np.sqrt(2.0 / in_dim))
        b = np.zeros((1, config.hidden_dim))
        layers.append((w, b))
        adapters.append(Adapter(
            w_down=randn(rng, config.hidden_dim, config.bottleneck_dim,
                         np.sqrt(2.0 / config.hidden_dim)),
            b_down=np.zeros((1, config.bottleneck_dim)),
            w_up=randn(rng, config.bottleneck_dim, config.hidden_dim,
                       np.sqrt(2.0 / config.bottleneck_dim)),
            b_up=np.zeros((1, config.hidden_dim)),
        ))
        in_dim = config.hidden_dim
    return GatedModel(config, layers, adapters)


def forward(model: GatedModel, task_id: int, batch: Matrix,
            gates: gating.GateSet | None = None) -> tuple[Matrix, ForwardTrace]:
    """Gated forward pass. gates=None runs the adapters ungated (all weights)."""
    if task_id not in model.heads:
        raise KeyError(f"no head for task {task_id}")
    if batch.ndim != 2 or batch.shape[1] != model.config.input_dim:
        raise ShapeError(f"batch shape {batch.shape} does not match "
                         f"input_dim {model.config.input_dim}")
    if gates is not None and len(gates.tensors) != 2 * len(model.adapters):
        raise ShapeError(f"gate set has {len(gates.tensors)} tensors, "
                         f"model has {2 * len(model.adapters)} gated tensors")
    trace = ForwardTrace(task_id=task_id)
    x = batch
    for i, ((w, b), a) in enumerate(zip(model.layers, model.adapters)):
        trace.layer_in.append(x)
        z = x @ w + b
        h = np.maximum(z, 0.0)
        if gates is None:
            eff_down, eff_up = a.w_down, a.w_up
        else:
            eff_down = gating.select(a.w_down, gates.tensors[2 * i])
            eff_up = gating.select(a.w_up, gates.tensors[2 * i + 1])
        p = h @ eff_down + a.b_down
        u = np.maximum(p, 0.0)
        x = h + u @ eff_up + a.b_up
        trace.pre.append(z)
        trace.hidden.append(h)
        trace.down_pre.append(p)
        trace.down_act.append(u)
        trace.eff_down.append(eff_down)
        trace.eff_up.append(eff_up)
    head = model.heads[task_id]
    trace.head_in = x
    trace.logits = x @ head.w + head.b
    return trace.logits, trace


def _softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def head_loss(logits: Matrix, labels: np.ndarray) -> float:
    """Mean cross-entropy via log-sum-exp."""
    n, n_classes = logits.shape
    if len(labels) != n:
        raise ShapeError(f"{n} logit rows vs {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - shifted[np.arange(n), labels]))


def backward(model: GatedModel, trace: ForwardTrace, labels: np.ndarray) -> Gradients:
    """Mean cross-entropy backward. Returns gradients for the effective adapter
    weights, the popup scores (effective-weight gradient times frozen weight),
    and the active head; nothing for the backbone."""
    logits = trace.logits
    n = logits.shape[0]
    if len(labels) != n:
        raise ShapeError(f"trace batch size {n} vs {len(labels)} labels")
    head = model.heads[trace.task_id]
    probs = _softmax(logits)
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    g /= n

    head_w_grad = trace.head_in.T @ g
    head_b_grad = g.sum(axis=0, keepdims=True)
    d = g @ head.w.T

    eff_grads: list[Matrix | None] = [None] * (2 * len(model.adapters))
    for i in reversed(range(len(model.layers))):
        h = trace.hidden[i]
        eff_up_grad = trace.down_act[i].T @ d
        du = d @ trace.eff_up[i].T
        dp = du * (trace.down_pre[i] > 0)
        eff_down_grad = h.T @ dp
        dh = d + dp @ trace.eff_down[i].T
        dz = dh * (trace.pre[i] > 0)
        d = dz @ model.layers[i][0].T
        eff_grads[2 * i] = eff_down_grad
        eff_grads[2 * i + 1] = eff_up_grad

    weights = model.gated_tensors()
    score_grads = [np.multiply(eg, w) for eg, w in zip(eff_grads, weights)]
    return Gradients(eff_weight=eff_grads, score=score_grads,
                     head_w=head_w_grad, head_b=head_b_grad)


def predictions(logits: Matrix) -> np.ndarray:
    return logits.argmax(axis=1)
