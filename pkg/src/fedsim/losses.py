"""Training objectives: cross-entropy, KL variants, and distillation losses.

Every batched loss returns its batch-mean value together with the gradient
with respect to the student logits, ready to be chained through
``nn.backward``. Teacher outputs are always treated as constants: no
gradient flows into a teacher. Temperature scaling applies to both sides of
every KL-type term, while cross-entropy terms always use temperature one,
and no additional temperature-squared rescaling is applied.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .knowledge import DistillWeights

# Floor applied inside logarithms of externally supplied probabilities.
PROB_FLOOR = 1e-12


def _log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    shifted = scaled - np.max(scaled, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def _checked_batch(student_logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    student_logits = np.asarray(student_logits, dtype=np.float64)
    labels = np.asarray(labels)
    if student_logits.ndim != 2:
        raise ValueError(f"logits must be 2-D, got shape {student_logits.shape}")
    if labels.shape != (student_logits.shape[0],):
        raise ValueError(
            f"labels shape {labels.shape} does not match batch size {student_logits.shape[0]}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= student_logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {student_logits.shape[1]})")
    return student_logits, labels


def _per_sample_cross_entropy(log_probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    return -log_probs[np.arange(labels.shape[0]), labels]


def cross_entropy(student_logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean cross-entropy and its logit gradient (softmax - onehot)/B."""
    student_logits, labels = _checked_batch(student_logits, labels)
    log_probs = _log_softmax(student_logits)
    loss = float(np.mean(_per_sample_cross_entropy(log_probs, labels)))
    grad = np.exp(log_probs)
    grad[np.arange(labels.shape[0]), labels] -= 1.0
    grad /= labels.shape[0]
    return loss, grad


def _weighted_kl_terms(p: np.ndarray, q: np.ndarray, weights: np.ndarray) -> float:
    """sum_c weights_c * p_c * log(p_c / q_c) with 0*log(0) treated as zero."""
    positive = p > 0.0
    terms = np.zeros_like(p)
    terms[positive] = p[positive] * (
        np.log(p[positive]) - np.log(np.maximum(q[positive], PROB_FLOOR))
    )
    return float(np.sum(weights * terms))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) over probability vectors, floored at PROB_FLOOR inside logs."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"expected matching 1-D vectors, got {p.shape} and {q.shape}")
    return _weighted_kl_terms(p, q, np.ones_like(p))


def dynamic_kl(p: np.ndarray, q: np.ndarray, alpha_row: np.ndarray) -> float:
    """Classwise weighted KL: sum_c alpha_c * p_c * log(p_c / q_c)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    alpha_row = np.asarray(alpha_row, dtype=np.float64)
    if not (p.shape == q.shape == alpha_row.shape) or p.ndim != 1:
        raise ValueError(
            f"expected matching 1-D vectors, got {p.shape}, {q.shape}, {alpha_row.shape}"
        )
    return _weighted_kl_terms(p, q, alpha_row)


def _weighted_kl_rows(log_p: np.ndarray, log_q: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise weighted KL from log-probabilities; weights broadcast over rows."""
    return np.sum(weights * np.exp(log_p) * (log_p - log_q), axis=-1)


def _weighted_kl_grad_rows(
    p: np.ndarray, q: np.ndarray, weights: np.ndarray, temperature: float
) -> np.ndarray:
    """d/d(student logits) of the row-wise weighted KL, teacher held constant."""
    weighted_p = weights * p
    return -(weighted_p - q * weighted_p.sum(axis=-1, keepdims=True)) / temperature


def standard_kd_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    labels: np.ndarray,
    alpha: float,
    temperature: float,
) -> tuple[float, np.ndarray]:
    """(1 - alpha) * cross-entropy + alpha * batch-mean KL(teacher || student)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    student_logits, labels = _checked_batch(student_logits, labels)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.shape != student_logits.shape:
        raise ValueError(
            f"teacher logits shape {teacher_logits.shape} does not match "
            f"student {student_logits.shape}"
        )
    ce_loss, ce_grad = cross_entropy(student_logits, labels)
    log_p = _log_softmax(teacher_logits, temperature)
    log_q = _log_softmax(student_logits, temperature)
    ones = np.ones(student_logits.shape[1])
    kl_loss = float(np.mean(_weighted_kl_rows(log_p, log_q, ones)))
    kl_grad = _weighted_kl_grad_rows(np.exp(log_p), np.exp(log_q), ones, temperature)
    kl_grad /= labels.shape[0]
    return (1.0 - alpha) * ce_loss + alpha * kl_loss, (1.0 - alpha) * ce_grad + alpha * kl_grad


def dynamic_kd_loss(
    student_logits: np.ndarray,
    teacher_logits_list: Sequence[np.ndarray],
    labels: np.ndarray,
    alpha: DistillWeights,
    temperature: float,
) -> tuple[float, np.ndarray]:
    """Dynamic distillation against an ensemble of teachers.

    Per sample: the student weight of the ground-truth class scales the
    cross-entropy term, and each teacher contributes its classwise weighted
    KL divergence. When every teacher row is zero the loss and gradient
    reduce bit-for-bit to plain cross-entropy.
    """
    student_logits, labels = _checked_batch(student_logits, labels)
    if len(teacher_logits_list) == 0:
        raise ValueError("at least one teacher is required")
    if alpha.num_teachers != len(teacher_logits_list):
        raise ValueError(
            f"{len(teacher_logits_list)} teachers but {alpha.num_teachers} weight rows"
        )
    if alpha.student_row.shape[0] != student_logits.shape[1]:
        raise ValueError(
            f"weights cover {alpha.student_row.shape[0]} classes, "
            f"logits have {student_logits.shape[1]}"
        )
    batch = labels.shape[0]
    log_probs_1 = _log_softmax(student_logits)
    per_ce = _per_sample_cross_entropy(log_probs_1, labels)
    onehot = np.zeros_like(student_logits)
    onehot[np.arange(batch), labels] = 1.0
    student_weight = alpha.student_row[labels]

    per_sample = student_weight * per_ce
    grad_rows = student_weight[:, None] * (np.exp(log_probs_1) - onehot)

    log_q = _log_softmax(student_logits, temperature)
    q = np.exp(log_q)
    for row, teacher_logits in zip(alpha.teacher_rows, teacher_logits_list):
        teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
        if teacher_logits.shape != student_logits.shape:
            raise ValueError(
                f"teacher logits shape {teacher_logits.shape} does not match "
                f"student {student_logits.shape}"
            )
        log_p = _log_softmax(teacher_logits, temperature)
        per_sample = per_sample + _weighted_kl_rows(log_p, log_q, row)
        grad_rows = grad_rows + _weighted_kl_grad_rows(np.exp(log_p), q, row, temperature)
    return float(np.mean(per_sample)), grad_rows / batch


def ntd_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    labels: np.ndarray,
    weight: float,
    temperature: float,
) -> tuple[float, np.ndarray]:
    """Cross-entropy plus a KL term that masks out each sample's true class."""
    if weight < 0:
        raise ValueError(f"weight must be non-negative, got {weight}")
    student_logits, labels = _checked_batch(student_logits, labels)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if teacher_logits.shape != student_logits.shape:
        raise ValueError(
            f"teacher logits shape {teacher_logits.shape} does not match "
            f"student {student_logits.shape}"
        )
    ce_loss, ce_grad = cross_entropy(student_logits, labels)
    mask = np.ones_like(student_logits)
    mask[np.arange(labels.shape[0]), labels] = 0.0
    log_p = _log_softmax(teacher_logits, temperature)
    log_q = _log_softmax(student_logits, temperature)
    masked_kl = float(np.mean(_weighted_kl_rows(log_p, log_q, mask)))
    kl_grad = _weighted_kl_grad_rows(np.exp(log_p), np.exp(log_q), mask, temperature)
    kl_grad /= labels.shape[0]
    return ce_loss + weight * masked_kl, ce_grad + weight * kl_grad
