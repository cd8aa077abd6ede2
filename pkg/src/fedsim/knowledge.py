"""Label-count bookkeeping that drives the distillation weights.

A label count is a non-negative per-class vector used as a proxy for what a
model knows about each class. Client counts are relative frequencies and sum
to one. The server keeps an accumulated count for the global model that is
deliberately never renormalized: each time a client participates, a fraction
``gamma`` of its count is added until that client is fully accounted for, so
the accumulated vector grows over the rounds and gradually outweighs any
single client's unit-mass count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class DistillWeights:
    """Per-class mixing weights for one student and K teachers.

    For every class whose combined count is positive, the student weight and
    the teacher weights sum to one. Classes nobody has seen default the full
    weight to the student's ground-truth loss.
    """

    student_row: np.ndarray
    teacher_rows: np.ndarray

    def __post_init__(self) -> None:
        student = np.asarray(self.student_row, dtype=np.float64)
        teachers = np.asarray(self.teacher_rows, dtype=np.float64)
        if student.ndim != 1 or teachers.ndim != 2 or teachers.shape[1] != student.shape[0]:
            raise ValueError(
                f"inconsistent weight shapes: student {student.shape}, teachers {teachers.shape}"
            )
        student.flags.writeable = False
        teachers.flags.writeable = False
        object.__setattr__(self, "student_row", student)
        object.__setattr__(self, "teacher_rows", teachers)

    @property
    def num_teachers(self) -> int:
        return self.teacher_rows.shape[0]


def _validate_count(counts: np.ndarray, name: str) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {counts.shape}")
    if not np.all(np.isfinite(counts)) or np.any(counts < 0):
        raise ValueError(f"{name} must be finite and non-negative")
    return counts


def client_label_count(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Relative class frequencies of a client dataset (sums to one)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot compute a label count for an empty dataset")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    return counts / labels.size


def compute_alpha(nu: np.ndarray, mus: Sequence[np.ndarray]) -> DistillWeights:
    """Distillation weights from the student count ``nu`` and teacher counts.

    Teacher i gets mu_i[c] / (nu[c] + sum_k mu_k[c]) for class c and the
    student gets the complementary nu share. A class with zero combined count
    is degenerate: the student keeps weight one and every teacher gets zero,
    deferring entirely to the ground-truth labels.
    """
    if len(mus) < 1:
        raise ValueError("at least one teacher count is required")
    nu = _validate_count(nu, "student count")
    teacher_counts = np.stack([_validate_count(mu, "teacher count") for mu in mus])
    if teacher_counts.shape[1] != nu.shape[0]:
        raise ValueError(
            f"teacher count length {teacher_counts.shape[1]} does not match "
            f"student count length {nu.shape[0]}"
        )
    denom = nu + teacher_counts.sum(axis=0)
    degenerate = denom == 0.0
    safe = np.where(degenerate, 1.0, denom)
    student_row = np.where(degenerate, 1.0, nu / safe)
    teacher_rows = np.where(degenerate, 0.0, teacher_counts / safe)
    return DistillWeights(student_row, teacher_rows)


def update_global_count(
    global_count: np.ndarray,
    registry: Mapping[int, int],
    participants: Sequence[tuple[int, np.ndarray]],
    gamma: float,
) -> tuple[np.ndarray, dict[int, int]]:
    """Fold one round of participants into the accumulated global count.

    Participation counters are incremented first; a client then contributes
    gamma * mu_k only while gamma * r_k stays at or below one, which caps its
    lifetime contribution at gamma * floor(1/gamma) * mu_k.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    new_count = _validate_count(global_count, "global count").copy()
    new_registry = dict(registry)
    for client_id, _ in participants:
        new_registry[client_id] = new_registry.get(client_id, 0) + 1
    for client_id, mu in participants:
        if gamma * new_registry[client_id] <= 1.0:
            new_count += gamma * _validate_count(mu, "participant count")
    new_count.flags.writeable = False
    return new_count, new_registry
