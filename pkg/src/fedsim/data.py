"""Dataset synthesis, CSV ingestion, and the split/partition pipeline.

All randomized operations draw from an explicitly seeded PCG64 generator and
are bit-deterministic given their seed. Subsets keep sorted parent indices so
the same split always yields the same row order.

CSV contract: header ``f0,f1,...,f{d-1},label``; features are decimal
floats, labels base-10 non-negative integers; UTF-8 with LF newlines.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix plus integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"labels shape {labels.shape} does not match {features.shape[0]} rows"
            )
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be positive, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        features.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class PartitionPlan:
    """Disjoint per-client index lists into a parent dataset."""

    assignments: tuple[np.ndarray, ...]
    beta: float
    seed: int

    def __post_init__(self) -> None:
        frozen = []
        for indices in self.assignments:
            arr = np.array(indices, dtype=np.int64)
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "assignments", tuple(frozen))


def _class_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Deterministic blob layout: class c sits at distance separation*(1 + c//dim)
    from the origin along axis c % dim."""
    means = np.zeros((num_classes, dim))
    for c in range(num_classes):
        means[c, c % dim] = separation * (1 + c // dim)
    return means


def generate_synthetic(
    num_classes: int,
    dim: int,
    num_samples: int,
    separation: float,
    noise: float,
    seed: int,
) -> LabeledDataset:
    """Gaussian blobs with near-equal class counts, shuffled, seed-deterministic."""
    if num_classes < 2 or dim < 1:
        raise ValueError(f"invalid dimensions: {num_classes} classes, dim {dim}")
    if num_samples < num_classes:
        raise ValueError(f"need at least one sample per class, got {num_samples}")
    if separation <= 0 or noise <= 0:
        raise ValueError("separation and noise must be positive")
    rng = np.random.default_rng(seed)
    means = _class_means(num_classes, dim, separation)
    counts = np.full(num_classes, num_samples // num_classes)
    counts[: num_samples % num_classes] += 1
    features = np.concatenate(
        [means[c] + noise * rng.standard_normal((counts[c], dim)) for c in range(num_classes)]
    )
    labels = np.repeat(np.arange(num_classes), counts)
    order = rng.permutation(num_samples)
    return LabeledDataset(features[order], labels[order], num_classes)


def load_csv(path: str, num_classes: int | None = None) -> LabeledDataset:
    """Read a dataset from the CSV contract, preserving row order.

    The class count is inferred as max label + 1 unless overridden.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        dim = len(header) - 1
        expected = [f"f{i}" for i in range(dim)] + ["label"]
        if dim < 1 or header != expected:
            raise ValueError(f"{path}: malformed header {header!r}")
        rows: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise ValueError(f"{path}:{line_no}: expected {dim + 1} fields, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row[:dim]])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: non-numeric feature") from None
            try:
                label = int(row[dim])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: non-integer label {row[dim]!r}") from None
            if label < 0:
                raise ValueError(f"{path}:{line_no}: negative label {label}")
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    inferred = max(labels) + 1
    if num_classes is None:
        num_classes = max(inferred, 2)
    elif num_classes < inferred:
        raise ValueError(f"{path}: labels require at least {inferred} classes, got {num_classes}")
    return LabeledDataset(np.array(rows), np.array(labels), num_classes)


def dirichlet_partition(
    dataset: LabeledDataset,
    num_clients: int,
    beta: float,
    min_per_client: int,
    seed: int,
) -> PartitionPlan:
    """Allocate each class across clients by a Dirichlet(beta) draw.

    The whole plan is resampled until every client holds at least
    ``min_per_client`` samples, up to 64 attempts.
    """
    if num_clients < 1:
        raise ValueError(f"num_clients must be positive, got {num_clients}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if min_per_client < 0:
        raise ValueError(f"min_per_client must be non-negative, got {min_per_client}")
    if len(dataset) < num_clients * min_per_client:
        raise ValueError(
            f"{len(dataset)} samples cannot give {num_clients} clients "
            f"{min_per_client} samples each"
        )
    rng = np.random.default_rng(seed)
    class_indices = [
        np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)
    ]
    for _ in range(64):
        per_client: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for indices in class_indices:
            if indices.size == 0:
                continue
            shuffled = rng.permutation(indices)
            proportions = rng.dirichlet(np.full(num_clients, beta))
            cuts = (np.cumsum(proportions)[:-1] * indices.size).astype(int)
            for client, chunk in enumerate(np.split(shuffled, cuts)):
                per_client[client].append(chunk)
        assignments = [
            np.sort(np.concatenate(chunks)) if chunks else np.array([], dtype=np.int64)
            for chunks in per_client
        ]
        if all(a.size >= min_per_client for a in assignments):
            return PartitionPlan(tuple(assignments), beta, seed)
    raise ValueError(
        f"could not satisfy min_per_client={min_per_client} for {num_clients} clients "
        f"after 64 attempts (beta={beta})"
    )


def split_public(
    dataset: LabeledDataset,
    public_fraction: float,
    public_val_fraction: float,
    seed: int,
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Carve out a small public set and split it into train/validation parts.

    Returns (public_train, public_val, remainder); the three parts are
    disjoint and exhaustive.
    """
    if not 0.0 < public_fraction < 1.0 or not 0.0 < public_val_fraction < 1.0:
        raise ValueError("fractions must lie in (0, 1)")
    n = len(dataset)
    n_public = round(n * public_fraction)
    n_val = round(n_public * public_val_fraction)
    n_train = n_public - n_val
    if min(n_train, n_val, n - n_public) < 1:
        raise ValueError(
            f"degenerate public split for n={n}: train={n_train}, val={n_val}, "
            f"remainder={n - n_public}"
        )
    perm = np.random.default_rng(seed).permutation(n)
    return (
        dataset.subset(np.sort(perm[:n_train])),
        dataset.subset(np.sort(perm[n_train:n_public])),
        dataset.subset(np.sort(perm[n_public:])),
    )


def train_val_split(
    dataset: LabeledDataset, train_fraction: float = 0.9, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Disjoint, exhaustive train/validation split; both parts non-empty."""
    n = len(dataset)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = min(max(round(n * train_fraction), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def subsample_imbalanced(dataset: LabeledDataset, decay: float, seed: int) -> LabeledDataset:
    """Keep a geometrically decaying share decay**c of each class c.

    Used to emulate a class-imbalanced public dataset; at least one sample
    per present class survives.
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"decay must lie in (0, 1], got {decay}")
    rng = np.random.default_rng(seed)
    kept = []
    for c in range(dataset.num_classes):
        indices = np.flatnonzero(dataset.labels == c)
        if indices.size == 0:
            continue
        keep = max(1, int(np.ceil(indices.size * decay**c)))
        kept.append(rng.permutation(indices)[:keep])
    return dataset.subset(np.sort(np.concatenate(kept)))
