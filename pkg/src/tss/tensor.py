"""Dense float64 kernels and seeded randomness shared by every other module.

Matrices are plain 2-D numpy arrays (row-major, float64); vectors are 1-D
arrays. All operations are pure: identical inputs produce bit-identical
outputs. Randomness comes exclusively from Philox (counter-based, splittable)
generators built by :func:`make_rng`, so a seed path fully determines every
draw for a given numpy version.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray
Rng = np.random.Generator

_EW_BINARY = {
    "mul": np.multiply,
    "add": np.add,
    "sub": np.subtract,
    "max": np.maximum,
}
_EW_UNARY = {
    "tanh": np.tanh,
    "abs": np.abs,
}


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def make_rng(*entropy: int) -> Rng:
    """Philox generator keyed by an integer entropy path, e.g. (seed, namespace, task)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def ew(op: str, a: Matrix, b=None) -> Matrix:
    """Element-wise op. `mul|add|sub|max` take a same-shape matrix, `scale` a
    scalar, `tanh|abs` no second operand."""
    if op in _EW_BINARY:
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"ew({op}) shape mismatch: {a.shape} vs {b.shape}")
        return _EW_BINARY[op](a, b)
    if op == "scale":
        if b is None or np.ndim(b) != 0:
            raise ShapeError(f"ew(scale) needs a scalar, got {b!r}")
        return a * float(b)
    if op in _EW_UNARY:
        if b is not None:
            raise ShapeError(f"ew({op}) is unary")
        return _EW_UNARY[op](a)
    raise ValueError(f"unknown element-wise op {op!r}")


def stats(a: Matrix) -> tuple[float, float]:
    """Mean and population standard deviation over all elements."""
    if a.size == 0:
        raise ShapeError("stats of an empty matrix")
    return float(a.mean()), float(a.std())


def randn(rng: Rng, rows: int, cols: int, std: float) -> Matrix:
    """i.i.d. zero-mean normal draws scaled by `std` (std >= 0)."""
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    return rng.standard_normal((rows, cols)) * std
