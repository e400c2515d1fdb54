"""Deterministic synthetic task streams for task-incremental experiments.

Two task families over a shared input space:

* similar  — every task labels points with one shared (orthonormalized)
  teacher; inputs are rotated by a per-task angle in the first two
  coordinates, plus noise. Small angular steps give transferable structure.
* dissimilar — every task draws its own independent teacher and its own
  coordinate permutation of the inputs, so tasks share nothing by design.

A heterogeneous stream interleaves both families in seeded random order.
Everything is reproducible byte-for-byte from (kind, n_tasks, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tensor import Matrix, make_rng

_NS_TEACHER = 11
_NS_SAMPLES = 12
_NS_PERM = 13
_NS_ORDER = 14

SIMILAR = "similar"
DISSIMILAR = "dissimilar"
HETEROGENEOUS = "heterogeneous"
STREAM_KINDS = (SIMILAR, DISSIMILAR, HETEROGENEOUS)


@dataclass(frozen=True)
class TaskSpec:
    task_id: int            # position in the stream
    family: str             # "similar" | "dissimilar"
    family_index: int       # index within the family (fixes teacher/rotation/permutation)
    base_seed: int          # family seed; all draws derive from (base_seed, family_index)
    n_classes: int
    input_dim: int
    n_train: int
    n_val: int
    n_test: int
    rotation_deg: float     # similar family only (0 otherwise)
    noise_std: float


@dataclass(frozen=True)
class TaskStream:
    kind: str
    seed: int
    n_tasks: int
    tasks: tuple[TaskSpec, ...]
    order: tuple[int, ...]  # permutation applied to the concatenated families


@dataclass
class TaskData:
    spec: TaskSpec
    x_train: Matrix
    y_train: np.ndarray
    x_val: Matrix
    y_val: np.ndarray
    x_test: Matrix
    y_test: np.ndarray


def _fold(seed: int, salt: int) -> int:
    return seed * 1_000_003 + salt


def teacher(base_seed: int, family_index: int, input_dim: int, n_classes: int) -> Matrix:
    """Orthonormal-column teacher (QR of a seeded normal draw, signs fixed),
    so argmax labels are exactly uniform over classes in expectation."""
    raw = make_rng(base_seed, _NS_TEACHER, family_index).standard_normal(
        (input_dim, n_classes))
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))


def _rotation(input_dim: int, deg: float) -> Matrix:
    rot = np.eye(input_dim)
    th = np.deg2rad(deg)
    rot[0, 0] = rot[1, 1] = np.cos(th)
    rot[0, 1] = -np.sin(th)
    rot[1, 0] = np.sin(th)
    return rot


def make_similar_family(n_tasks: int, base_seed: int, *, input_dim: int = 20,
                        n_classes: int = 5, sizes: tuple[int, int, int] = (500, 100, 200),
                        noise_std: float = 0.5, max_angle: float = 30.0) -> list[TaskSpec]:
    """One shared teacher; task k rotates inputs by max_angle * k / (n-1) degrees."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    specs = []
    for k in range(n_tasks):
        angle = 0.0 if n_tasks == 1 else max_angle * k / (n_tasks - 1)
        specs.append(TaskSpec(
            task_id=k, family=SIMILAR, family_index=k, base_seed=base_seed,
            n_classes=n_classes, input_dim=input_dim,
            n_train=sizes[0], n_val=sizes[1], n_test=sizes[2],
            rotation_deg=angle, noise_std=noise_std,
        ))
    return specs


def make_dissimilar_family(n_tasks: int, base_seed: int, *, input_dim: int = 20,
                           n_classes: int = 5, sizes: tuple[int, int, int] = (500, 100, 200),
                           noise_std: float = 0.5) -> list[TaskSpec]:
    """Independent teacher and independent input permutation per task."""
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    return [TaskSpec(
        task_id=k, family=DISSIMILAR, family_index=k, base_seed=base_seed,
        n_classes=n_classes, input_dim=input_dim,
        n_train=sizes[0], n_val=sizes[1], n_test=sizes[2],
        rotation_deg=0.0, noise_std=noise_std,
    ) for k in range(n_tasks)]


def make_stream(kind: str, n_tasks: int, seed: int, **family_kw) -> TaskStream:
    """Build a task stream. Heterogeneous streams take floor(n/2) similar tasks,
    the rest dissimilar, shuffled by the stream seed (permutation recorded)."""
    if kind not in STREAM_KINDS:
        raise ValueError(f"unknown stream kind {kind!r}")
    if n_tasks < 2:
        raise ValueError("a stream needs at least 2 tasks")
    dis_kw = dict(family_kw)
    dis_kw.pop("max_angle", None)
    if kind == SIMILAR:
        specs = make_similar_family(n_tasks, _fold(seed, 1), **family_kw)
        order = tuple(range(n_tasks))
    elif kind == DISSIMILAR:
        specs = make_dissimilar_family(n_tasks, _fold(seed, 2), **dis_kw)
        order = tuple(range(n_tasks))
    else:
        n_sim = n_tasks // 2
        pool = (make_similar_family(n_sim, _fold(seed, 1), **family_kw)
                + make_dissimilar_family(n_tasks - n_sim, _fold(seed, 2), **dis_kw))
        order = tuple(int(i) for i in make_rng(seed, _NS_ORDER).permutation(n_tasks))
        specs = [pool[i] for i in order]
    tasks = tuple(
        TaskSpec(task_id=pos, family=s.family, family_index=s.family_index,
                 base_seed=s.base_seed, n_classes=s.n_classes, input_dim=s.input_dim,
                 n_train=s.n_train, n_val=s.n_val, n_test=s.n_test,
                 rotation_deg=s.rotation_deg, noise_std=s.noise_std)
        for pos, s in enumerate(specs)
    )
    return TaskStream(kind=kind, seed=seed, n_tasks=n_tasks, tasks=tasks, order=order)


def materialize(spec: TaskSpec) -> TaskData:
    """Draw the task's datasets. Labels come from the clean latent point; the
    observed inputs are the rotated/permuted latents plus noise."""
    d, c = spec.input_dim, spec.n_classes
    n = spec.n_train + spec.n_val + spec.n_test
    rng = make_rng(spec.base_seed, _NS_SAMPLES, spec.family_index)
    z = rng.standard_normal((n, d))
    w_star = teacher(spec.base_seed, 0 if spec.family == SIMILAR else spec.family_index,
                     d, c)
    y = (z @ w_star).argmax(axis=1)
    if spec.family == SIMILAR:
        x = z @ _rotation(d, spec.rotation_deg).T
    else:
        perm = make_rng(spec.base_seed, _NS_PERM, spec.family_index).permutation(d)
        x = z[:, perm]
    x = x + spec.noise_std * rng.standard_normal((n, d))
    a, b = spec.n_train, spec.n_train + spec.n_val
    return TaskData(
        spec=spec,
        x_train=x[:a], y_train=y[:a],
        x_val=x[a:b], y_val=y[a:b],
        x_test=x[b:], y_test=y[b:],
    )


def export_csv(x: Matrix, y: np.ndarray, path) -> None:
    """Write one split as CSV with header f0..f{d-1},label."""
    d = x.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for row, label in zip(x, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
