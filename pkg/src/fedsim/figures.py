"""Figure rendering for the export kinds.

Each exported CSV gets a matching PNG rendered with the Agg backend so the
command works headless. The figures are meant as quick visual reports, not
publication plots; the CSV stays the canonical output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: str) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_forgetting_ecdf(values: list[float], fractions: list[float], path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(values, fractions, where="post")
    ax.set_xlabel("round forgetting")
    ax.set_ylabel("cumulative fraction of rounds")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    _finish(fig, path)


def render_heatmap(matrix: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    image = ax.imshow(
        matrix.T, aspect="auto", origin="lower", cmap="Blues", vmin=0.0, vmax=1.0
    )
    ax.set_xlabel("round (0 = initial model)")
    ax.set_ylabel("class")
    fig.colorbar(image, ax=ax, label="test accuracy")
    _finish(fig, path)


def render_local_global_loss(
    rounds: list[int], mean_local: list[float], global_loss: list[float], path: str
) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(rounds, mean_local, label="mean local model loss", marker=".")
    ax.plot(rounds, global_loss, label="global model loss", marker=".")
    ax.set_xlabel("round")
    ax.set_ylabel("test loss")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)


def render_decomposition(
    rounds: list[int],
    local: list[float],
    aggregation: list[float],
    round_forgetting: list[float | None],
    path: str,
) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(rounds, local, label="local forgetting", marker=".")
    ax.plot(rounds, aggregation, label="aggregation forgetting", marker=".")
    defined = [(t, v) for t, v in zip(rounds, round_forgetting) if v is not None]
    if defined:
        ax.plot(*zip(*defined), label="round forgetting", marker=".")
    ax.set_xlabel("round")
    ax.set_ylabel("mean per-class accuracy drop")
    ax.legend()
    ax.grid(alpha=0.3)
    _finish(fig, path)
