"""Per-class accuracy tracking and forgetting quantification.

The accuracy matrix has one row per model snapshot: row 0 is the initial
(untrained) model and row t the global model after round t. Classes absent
from the test set are marked NaN and excluded from every per-class average,
with the class count adjusted accordingly.

Round forgetting averages only the per-class accuracy *drops* between
consecutive rounds, so a drop in one class cannot be masked by a gain in
another. The aggregate score instead takes, per class, the largest gap
between any intermediate round and the final round, which may be negative
for monotonically improving runs and is reported as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .data import LabeledDataset
from .losses import cross_entropy


@dataclass(frozen=True)
class RoundRecord:
    """Everything measured about one communication round.

    Per-class accuracies are on the held-out test set: the global model the
    round started from, every participating client's locally updated model,
    and the new global model.
    """

    round_index: int
    participants: tuple[int, ...]
    prev_global_class_acc: np.ndarray
    client_class_acc: Mapping[int, np.ndarray]
    global_class_acc: np.ndarray
    global_acc: float
    mean_local_test_loss: float
    global_test_loss: float
    server_distill_epochs: int

    def __post_init__(self) -> None:
        if sorted(self.client_class_acc) != sorted(self.participants):
            raise ValueError("client accuracy keys do not match the participant list")


def per_class_accuracy(params: nn.ModelParams, test_set: LabeledDataset) -> np.ndarray:
    """Argmax accuracy per class; classes absent from the test set are NaN."""
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    predictions = np.argmax(nn.forward_logits(params, test_set.features), axis=1)
    return _per_class_accuracy_from_predictions(predictions, test_set.labels, test_set.num_classes)


def _per_class_accuracy_from_predictions(
    predictions: np.ndarray, labels: np.ndarray, num_classes: int
) -> np.ndarray:
    accuracy = np.full(num_classes, np.nan)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            accuracy[c] = np.mean(predictions[mask] == c)
    return accuracy


@dataclass(frozen=True)
class ModelEvaluation:
    class_accuracy: np.ndarray
    accuracy: float
    test_loss: float


def evaluate_model(params: nn.ModelParams, test_set: LabeledDataset) -> ModelEvaluation:
    """Per-class accuracy, overall accuracy, and mean cross-entropy in one pass."""
    if len(test_set) == 0:
        raise ValueError("test set is empty")
    logits = nn.forward_logits(params, test_set.features)
    loss, _ = cross_entropy(logits, test_set.labels)
    predictions = np.argmax(logits, axis=1)
    return ModelEvaluation(
        class_accuracy=_per_class_accuracy_from_predictions(
            predictions, test_set.labels, test_set.num_classes
        ),
        accuracy=float(np.mean(predictions == test_set.labels)),
        test_loss=loss,
    )


def one_sided_drop(prev_row: np.ndarray, new_row: np.ndarray) -> float:
    """Mean over classes of max(0, prev - new), ignoring NaN classes."""
    prev_row = np.asarray(prev_row, dtype=np.float64)
    new_row = np.asarray(new_row, dtype=np.float64)
    if prev_row.shape != new_row.shape:
        raise ValueError(f"row shapes differ: {prev_row.shape} vs {new_row.shape}")
    valid = np.isfinite(prev_row) & np.isfinite(new_row)
    if not valid.any():
        return float("nan")
    return float(np.mean(np.maximum(0.0, prev_row[valid] - new_row[valid])))


def round_forgetting(accuracy_matrix: np.ndarray, t: int) -> float:
    """Mean per-class accuracy drop from round t-1 to round t (gains count zero)."""
    accuracy_matrix = np.asarray(accuracy_matrix, dtype=np.float64)
    if not 1 <= t < accuracy_matrix.shape[0]:
        raise ValueError(f"round {t} outside matrix with {accuracy_matrix.shape[0]} rows")
    return one_sided_drop(accuracy_matrix[t - 1], accuracy_matrix[t])


def aggregate_forgetting(accuracy_matrix: np.ndarray) -> float:
    """Mean over classes of the largest gap max_t (A[t] - A[T]) for t in 1..T-1.

    Row 0 (the untrained model) is excluded. The result can be negative and
    is not clipped.
    """
    accuracy_matrix = np.asarray(accuracy_matrix, dtype=np.float64)
    last = accuracy_matrix.shape[0] - 1
    if last < 2:
        raise ValueError("aggregate forgetting needs at least two trained rounds")
    gaps = accuracy_matrix[1:last] - accuracy_matrix[last]
    with np.errstate(invalid="ignore"):
        per_class = np.nanmax(gaps, axis=0)
    return float(np.nanmean(per_class))


def ecdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative fraction) steps over unique values."""
    if len(values) == 0:
        raise ValueError("ecdf of an empty sequence")
    sorted_values = np.sort(np.asarray(values, dtype=np.float64))
    unique, counts = np.unique(sorted_values, return_counts=True)
    fractions = np.cumsum(counts) / sorted_values.size
    return [(float(v), float(f)) for v, f in zip(unique, fractions)]


def rounds_to_target(
    accuracy_trace: Sequence[float], target_accuracy: float, fraction: float
) -> int | None:
    """First 1-based round whose accuracy reaches target * fraction, else None."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if len(accuracy_trace) == 0:
        raise ValueError("empty accuracy trace")
    threshold = target_accuracy * fraction
    for i, accuracy in enumerate(accuracy_trace):
        if accuracy >= threshold:
            return i + 1
    return None


def forgetting_decomposition(record: RoundRecord) -> tuple[float, float]:
    """Split a round's knowledge loss into its local and aggregation parts.

    Local: mean over participants of the per-class drop from the starting
    global model to their updated model. Aggregation: per-class drop from the
    best participating model to the new global model.
    """
    if not record.participants:
        raise ValueError("round record has no participants")
    client_rows = np.stack([record.client_class_acc[k] for k in record.participants])
    local = float(
        np.mean([one_sided_drop(record.prev_global_class_acc, row) for row in client_rows])
    )
    with np.errstate(invalid="ignore"):
        best_client = np.nanmax(client_rows, axis=0)
    aggregation = one_sided_drop(best_client, record.global_class_acc)
    return local, aggregation
