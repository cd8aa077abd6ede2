"""Keyed random streams.

All randomness flows through PCG64 generators keyed by an integer tuple
(master seed first, then purpose tags, round numbers, client ids). Distinct
keys give statistically independent streams, and any consumer can be re-run
in isolation without disturbing the others, which is what makes the
simulator reproducible under arbitrary client-level parallelism.
"""

from __future__ import annotations

import numpy as np

# Purpose tags for the stream keys. Values are arbitrary but frozen: changing
# them silently changes every simulated experiment.
TAG_INIT = 0
TAG_SAMPLE = 1
TAG_CLIENT = 2
TAG_SERVER = 3
TAG_DATA = 10
TAG_TEST_SPLIT = 11
TAG_PUBLIC_SPLIT = 12
TAG_PARTITION = 13
TAG_CLIENT_SPLIT = 14
TAG_IMBALANCE = 15


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return a PCG64 generator for the given (seed, *key) tuple."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def derive_seed(seed: int, *key: int) -> int:
    """Collapse a stream key into a plain integer seed for seed-taking APIs."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return int(np.random.SeedSequence([seed, *key]).generate_state(1, np.uint64)[0])
