"""Popup-score thresholding, sub-network selection, and bit-packed gate files.

A GateSet holds one binary (0.0/1.0) tensor per gated weight tensor. Gates are
persisted in the TSSG container: 1 bit per gate, row-major, LSB-first within
each byte, one continuous bitstream across tensors, little-endian header
fields, CRC32 over the payload.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .tensor import Matrix, ShapeError

if TYPE_CHECKING:
    from .model import ScoreSet

MAGIC = b"TSSG"
VERSION = 1
_HEAD = struct.Struct("<4sHIH")   # magic, version, task_id, tensor_count
_SHAPE = struct.Struct("<II")     # rows, cols
_CRC = struct.Struct("<I")


class GateFileError(ValueError):
    """Raised for corrupt or unreadable TSSG blobs."""


@dataclass(eq=False)
class GateSet:
    task_id: int
    tensors: list[Matrix]         # values in {0.0, 1.0}, shapes mirror the scores
    epsilon: float = 0.0

    def ones_fraction(self) -> list[float]:
        return [float(t.mean()) for t in self.tensors]

    def total(self) -> int:
        return sum(t.size for t in self.tensors)


def threshold(scores: "ScoreSet", epsilon: float = 0.0) -> GateSet:
    """Gate = 1 where score > epsilon (strict: score == epsilon closes the gate)."""
    gates = [(s > epsilon).astype(np.float64) for s in scores.tensors]
    return GateSet(task_id=scores.task_id, tensors=gates, epsilon=epsilon)


def select(weights: Matrix, gates: Matrix) -> Matrix:
    """Effective weights: element-wise product of weights and binary gates."""
    if weights.shape != gates.shape:
        raise ShapeError(f"select shape mismatch: {weights.shape} vs {gates.shape}")
    return weights * gates


@dataclass(eq=False)
class PackedGates:
    version: int
    task_id: int
    shapes: tuple[tuple[int, int], ...]
    payload: bytes                # ceil(total_gates / 8) bytes

    def to_bytes(self) -> bytes:
        head = _HEAD.pack(MAGIC, self.version, self.task_id, len(self.shapes))
        shapes = b"".join(_SHAPE.pack(r, c) for r, c in self.shapes)
        crc = _CRC.pack(zlib.crc32(self.payload))
        return head + shapes + self.payload + crc

    @classmethod
    def from_bytes(cls, blob: bytes) -> "PackedGates":
        if len(blob) < _HEAD.size + _CRC.size:
            raise GateFileError(f"truncated gate blob ({len(blob)} bytes)")
        magic, version, task_id, count = _HEAD.unpack_from(blob, 0)
        if magic != MAGIC:
            raise GateFileError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise GateFileError(f"unsupported gate file version {version}")
        off = _HEAD.size
        shapes = []
        for _ in range(count):
            if off + _SHAPE.size > len(blob):
                raise GateFileError("truncated shape table")
            shapes.append(_SHAPE.unpack_from(blob, off))
            off += _SHAPE.size
        total = sum(r * c for r, c in shapes)
        n_payload = (total + 7) // 8
        if len(blob) != off + n_payload + _CRC.size:
            raise GateFileError(
                f"payload size mismatch: have {len(blob) - off - _CRC.size} bytes, "
                f"expected {n_payload}"
            )
        payload = blob[off:off + n_payload]
        (crc,) = _CRC.unpack_from(blob, off + n_payload)
        if crc != zlib.crc32(payload):
            raise GateFileError("payload CRC mismatch")
        return cls(version=version, task_id=task_id, shapes=tuple(shapes), payload=payload)


def pack(gates: GateSet) -> PackedGates:
    shapes = tuple(t.shape for t in gates.tensors)
    if gates.total() == 0:
        bits = np.zeros(0, dtype=np.uint8)
    else:
        bits = np.concatenate([t.ravel() for t in gates.tensors]).astype(np.uint8)
    payload = np.packbits(bits, bitorder="little").tobytes()
    return PackedGates(version=VERSION, task_id=gates.task_id, shapes=shapes, payload=payload)


def unpack(packed: PackedGates) -> GateSet:
    total = sum(r * c for r, c in packed.shapes)
    bits = np.unpackbits(
        np.frombuffer(packed.payload, dtype=np.uint8), count=total, bitorder="little"
    ).astype(np.float64)
    tensors, off = [], 0
    for r, c in packed.shapes:
        tensors.append(bits[off:off + r * c].reshape(r, c))
        off += r * c
    return GateSet(task_id=packed.task_id, tensors=tensors)


def gates_equal(a: GateSet, b: GateSet) -> bool:
    return (
        a.task_id == b.task_id
        and len(a.tensors) == len(b.tensors)
        and all(np.array_equal(x, y) for x, y in zip(a.tensors, b.tensors))
    )


def write_gates(path, gates: GateSet) -> None:
    with open(path, "wb") as fh:
        fh.write(pack(gates).to_bytes())


def read_gates(path) -> GateSet:
    with open(path, "rb") as fh:
        return unpack(PackedGates.from_bytes(fh.read()))


def sizes(shapes: Sequence[tuple[int, int]]) -> tuple[int, int]:
    """(total gate count, full blob size in bytes) for a shape list."""
    total = sum(r * c for r, c in shapes)
    return total, _HEAD.size + _SHAPE.size * len(shapes) + (total + 7) // 8 + _CRC.size
