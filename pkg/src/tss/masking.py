"""Importance maps over gated tensors: gradient-based computation, per-tensor
normalization, running element-wise-max accumulation, gradient soft-masking,
and the popup-score initialization policy.

Importance lifecycle per task: raw (mean over batches of |batch-mean
gradient|) -> normalized (per tensor: z-score, then |tanh|, so values land in
[0,1)) -> accumulated (element-wise max with the running map). Soft-masking
multiplies a gradient by (1 - accumulated importance), attenuating but never
sign-flipping updates to scores that earlier tasks rely on.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as model_mod
from .gating import GateSet
from .model import GatedModel, ScoreSet
from .tensor import Matrix, Rng, ShapeError, randn

_DEGENERATE_STD = 1e-12
# |tanh| saturates to 1.0 in float64 for |z| >~ 19; cap keeps (1 - I) > 0.
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass
class ImportanceMap:
    kind: str                 # "raw" | "normalized" | "accumulated"
    tensors: list[Matrix]

    def copy(self) -> "ImportanceMap":
        return ImportanceMap(self.kind, [t.copy() for t in self.tensors])


def zeros(shapes: Sequence[tuple[int, int]]) -> ImportanceMap:
    """The before-any-task accumulated map: all zeros, nothing protected."""
    return ImportanceMap("accumulated", [np.zeros(s) for s in shapes])


def compute_importance(model: GatedModel, task_id: int, inputs: Matrix,
                       labels: np.ndarray, gates: GateSet | None = None,
                       batch_size: int = 32, target: str = "scores") -> ImportanceMap:
    """Mean over batches of |batch-mean gradient| per tensor element.

    Read-only: gradients are computed but never applied. `target` picks score
    gradients (default) or effective-weight gradients (for variants that train
    the adapters directly).
    """
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("importance needs a nonempty dataset")
    if target not in ("scores", "weights"):
        raise ValueError(f"unknown importance target {target!r}")
    acc = [np.zeros(s) for s in model.gated_shapes()]
    n_batches = 0
    for start in range(0, n, batch_size):
        xb = inputs[start:start + batch_size]
        yb = labels[start:start + batch_size]
        _, trace = model_mod.forward(model, task_id, xb, gates)
        grads = model_mod.backward(model, trace, yb)
        picked = grads.score if target == "scores" else grads.eff_weight
        for a, g in zip(acc, picked):
            a += np.abs(g)
        n_batches += 1
    return ImportanceMap("raw", [a / n_batches for a in acc])


def normalize(raw: ImportanceMap) -> ImportanceMap:
    """Per tensor: z-score to mean 0 / population std 1, then |tanh|.

    A degenerate tensor (std below 1e-12) maps to all zeros: nothing is
    distinguished, so nothing gets protected.
    """
    if raw.kind != "raw":
        raise ValueError(f"normalize expects a raw map, got {raw.kind!r}")
    out = []
    for t in raw.tensors:
        std = t.std()
        if std < _DEGENERATE_STD:
            out.append(np.zeros_like(t))
        else:
            z = (t - t.mean()) / std
            out.append(np.minimum(np.abs(np.tanh(z)), _BELOW_ONE))
    return ImportanceMap("normalized", out)


def accumulate(prev: ImportanceMap, new: ImportanceMap) -> ImportanceMap:
    """Element-wise max of the running accumulation and a task's normalized map."""
    if prev.kind != "accumulated":
        raise ValueError(f"prev must be accumulated, got {prev.kind!r}")
    if new.kind != "normalized":
        raise ValueError(f"new must be normalized, got {new.kind!r}")
    if len(prev.tensors) != len(new.tensors):
        raise ShapeError("importance maps have different tensor counts")
    merged = []
    for p, q in zip(prev.tensors, new.tensors):
        if p.shape != q.shape:
            raise ShapeError(f"importance shape mismatch: {p.shape} vs {q.shape}")
        merged.append(np.maximum(p, q))
    return ImportanceMap("accumulated", merged)


def soft_mask(grads: list[Matrix], acc: ImportanceMap) -> list[Matrix]:
    """(1 - accumulated importance) * gradient, element-wise per tensor."""
    if acc.kind != "accumulated":
        raise ValueError(f"soft_mask expects an accumulated map, got {acc.kind!r}")
    if len(grads) != len(acc.tensors):
        raise ShapeError("gradient list and importance map sizes differ")
    out = []
    for g, imp in zip(grads, acc.tensors):
        if g.shape != imp.shape:
            raise ShapeError(f"soft_mask shape mismatch: {g.shape} vs {imp.shape}")
        out.append((1.0 - imp) * g)
    return out


def init_scores(task_index: int, shapes: Sequence[tuple[int, int]], rng: Rng,
                prev: ScoreSet | None = None, task_id: int | None = None) -> ScoreSet:
    """First task: zero-mean normal with std sqrt(2/fan_in) per tensor, fan_in
    being the row count of the weight the tensor gates. Later tasks: exact copy
    of the previous task's trained scores."""
    tid = task_index if task_id is None else task_id
    if task_index == 0:
        tensors = [randn(rng, r, c, np.sqrt(2.0 / r)) for r, c in shapes]
        return ScoreSet(task_id=tid, tensors=tensors)
    if prev is None:
        raise ValueError(f"task {task_index} needs the previous task's scores")
    return prev.copy(task_id=tid)


# --- float-tensor container (TSSI for importance, TSSH for heads) -----------

IMPORTANCE_MAGIC = b"TSSI"
HEAD_MAGIC = b"TSSH"
_F_VERSION = 1
_F_HEAD = struct.Struct("<4sHH")   # magic, version, tensor_count
_F_SHAPE = struct.Struct("<II")
_F_CRC = struct.Struct("<I")


class FloatFileError(ValueError):
    """Raised for corrupt or unreadable float-tensor blobs."""


def pack_floats(tensors: Sequence[Matrix], magic: bytes = IMPORTANCE_MAGIC) -> bytes:
    head = _F_HEAD.pack(magic, _F_VERSION, len(tensors))
    shapes = b"".join(_F_SHAPE.pack(*t.shape) for t in tensors)
    payload = b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in tensors)
    return head + shapes + payload + _F_CRC.pack(zlib.crc32(payload))


def unpack_floats(blob: bytes, magic: bytes = IMPORTANCE_MAGIC) -> list[Matrix]:
    if len(blob) < _F_HEAD.size + _F_CRC.size:
        raise FloatFileError(f"truncated float blob ({len(blob)} bytes)")
    got_magic, version, count = _F_HEAD.unpack_from(blob, 0)
    if got_magic != magic:
        raise FloatFileError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version != _F_VERSION:
        raise FloatFileError(f"unsupported float file version {version}")
    off = _F_HEAD.size
    shapes = []
    for _ in range(count):
        shapes.append(_F_SHAPE.unpack_from(blob, off))
        off += _F_SHAPE.size
    n_payload = sum(r * c for r, c in shapes) * 8
    if len(blob) != off + n_payload + _F_CRC.size:
        raise FloatFileError("payload size mismatch")
    payload = blob[off:off + n_payload]
    (crc,) = _F_CRC.unpack_from(blob, off + n_payload)
    if crc != zlib.crc32(payload):
        raise FloatFileError("payload CRC mismatch")
    tensors, pos = [], 0
    for r, c in shapes:
        nbytes = r * c * 8
        tensors.append(np.frombuffer(payload[pos:pos + nbytes], dtype="<f8")
                       .reshape(r, c).copy())
        pos += nbytes
    return tensors


def write_importance(path, acc: ImportanceMap) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_floats(acc.tensors, IMPORTANCE_MAGIC))


def read_importance(path) -> ImportanceMap:
    with open(path, "rb") as fh:
        return ImportanceMap("accumulated", unpack_floats(fh.read(), IMPORTANCE_MAGIC))
