"""Minimal dense ReLU classifier with explicit gradients.

Parameters live in one flat float64 vector so that weighted averaging,
checkpointing, and SGD are plain vector arithmetic. Everything here is a
pure function: parameter snapshots are immutable and updates produce new
snapshots, so any number of readers can evaluate a model concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    """Architecture: input width, hidden widths (possibly empty), classes."""

    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden layer widths must be positive, got {self.hidden_dims}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]

    @property
    def num_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass(frozen=True)
class ModelParams:
    """Immutable flat parameter snapshot laid out as W1, b1, W2, b2, ...

    Each weight matrix is stored row-major with shape (fan_in, fan_out).
    """

    spec: ModelSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"parameter vector must be 1-D, got shape {values.shape}")
        if values.shape[0] != self.spec.num_params:
            raise ValueError(
                f"parameter vector has length {values.shape[0]}, "
                f"spec requires {self.spec.num_params}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only (weight, bias) views per layer."""
        dims = self.spec.layer_dims
        out = []
        offset = 0
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            weight = self.values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = self.values[offset : offset + fan_out]
            offset += fan_out
            out.append((weight, bias))
        return out


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """He-style initialization: weights ~ N(0, 2/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    chunks = []
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        chunks.append(weight.ravel())
        chunks.append(np.zeros(fan_out))
    return ModelParams(spec, np.concatenate(chunks))


def _as_feature_matrix(spec: ModelSpec, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be 2-D (batch, input_dim), got shape {features.shape}")
    if features.shape[1] != spec.input_dim:
        raise ValueError(
            f"feature width {features.shape[1]} does not match input_dim {spec.input_dim}"
        )
    return features


def _forward_activations(params: ModelParams, features: np.ndarray) -> list[np.ndarray]:
    """Activations per layer: [input, hidden_1, ..., hidden_k, logits]."""
    activations = [features]
    layers = params.layers()
    hidden = features
    for weight, bias in layers[:-1]:
        hidden = np.maximum(hidden @ weight + bias, 0.0)
        activations.append(hidden)
    weight, bias = layers[-1]
    activations.append(hidden @ weight + bias)
    return activations


def forward_logits(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Logits of shape (batch, num_classes)."""
    features = _as_feature_matrix(params.spec, features)
    return _forward_activations(params, features)[-1]


def softmax_T(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-scaled softmax along the last axis, max-subtracted for stability."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scaled = np.asarray(logits, dtype=np.float64) / temperature
    scaled = scaled - np.max(scaled, axis=-1, keepdims=True)
    exp = np.exp(scaled)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def backward(params: ModelParams, features: np.ndarray, dloss_dlogits: np.ndarray) -> np.ndarray:
    """Chain an upstream logit-space gradient back to a flat parameter gradient.

    The ReLU subgradient at exactly zero is taken as zero.
    """
    features = _as_feature_matrix(params.spec, features)
    dloss_dlogits = np.asarray(dloss_dlogits, dtype=np.float64)
    expected = (features.shape[0], params.spec.num_classes)
    if dloss_dlogits.shape != expected:
        raise ValueError(
            f"dloss_dlogits has shape {dloss_dlogits.shape}, expected {expected}"
        )
    activations = _forward_activations(params, features)
    layers = params.layers()
    grads: list[np.ndarray] = [None] * len(layers)  # type: ignore[list-item]
    delta = dloss_dlogits
    for i in range(len(layers) - 1, -1, -1):
        weight, _ = layers[i]
        grad_w = activations[i].T @ delta
        grad_b = delta.sum(axis=0)
        grads[i] = np.concatenate([grad_w.ravel(), grad_b])
        if i > 0:
            delta = (delta @ weight.T) * (activations[i] > 0.0)
    return np.concatenate(grads)


def sgd_step(params: ModelParams, gradient: np.ndarray, lr: float) -> ModelParams:
    """New snapshot with values - lr * gradient."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.values.shape:
        raise ValueError(
            f"gradient length {gradient.shape} does not match params {params.values.shape}"
        )
    return ModelParams(params.spec, params.values - lr * gradient)
