"""Assembly of a full run from a configuration.

Pipeline: build (or load) the base dataset, carve out the test set, split off
the public train/validation sets, partition the remainder across clients with
a Dirichlet draw, and split each client shard into local train/validation
parts. Every stage uses its own derived seed, so any stage can be reproduced
in isolation.
"""

from __future__ import annotations

import numpy as np

from . import seeding
from .config import RunConfig
from .data import (
    LabeledDataset,
    dirichlet_partition,
    generate_synthetic,
    load_csv,
    split_public,
    subsample_imbalanced,
    train_val_split,
)
from .federation import (
    ExperimentEnv,
    ExperimentResult,
    make_client,
    run_experiment,
)
from .nn import ModelSpec


def _base_and_test(config: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    fed, data = config.federation, config.data
    if data.kind == "synthetic":
        dataset = generate_synthetic(
            num_classes=data.num_classes,
            dim=data.dim,
            num_samples=data.num_samples,
            separation=data.separation,
            noise=data.noise,
            seed=seeding.derive_seed(fed.seed, seeding.TAG_DATA),
        )
        return train_val_split(
            dataset,
            train_fraction=1.0 - data.test_fraction,
            seed=seeding.derive_seed(fed.seed, seeding.TAG_TEST_SPLIT),
        )
    dataset = load_csv(data.path, num_classes=data.num_classes)
    if data.test_path is not None:
        test_set = load_csv(data.test_path, num_classes=dataset.num_classes)
        if test_set.dim != dataset.dim:
            raise ValueError(
                f"test file width {test_set.dim} does not match training width {dataset.dim}"
            )
        return dataset, test_set
    return train_val_split(
        dataset,
        train_fraction=1.0 - data.test_fraction,
        seed=seeding.derive_seed(fed.seed, seeding.TAG_TEST_SPLIT),
    )


def build_environment(config: RunConfig) -> ExperimentEnv:
    fed, data = config.federation, config.data
    pool, test_set = _base_and_test(config)
    public_train, public_val, remainder = split_public(
        pool,
        public_fraction=data.public_fraction,
        public_val_fraction=data.public_val_fraction,
        seed=seeding.derive_seed(fed.seed, seeding.TAG_PUBLIC_SPLIT),
    )
    if data.public_imbalance_decay is not None:
        public_train = subsample_imbalanced(
            public_train,
            data.public_imbalance_decay,
            seeding.derive_seed(fed.seed, seeding.TAG_IMBALANCE, 0),
        )
        public_val = subsample_imbalanced(
            public_val,
            data.public_imbalance_decay,
            seeding.derive_seed(fed.seed, seeding.TAG_IMBALANCE, 1),
        )
    plan = dirichlet_partition(
        remainder,
        num_clients=fed.num_clients,
        beta=data.beta,
        min_per_client=data.min_per_client,
        seed=seeding.derive_seed(fed.seed, seeding.TAG_PARTITION),
    )
    clients = []
    for client_id, indices in enumerate(plan.assignments):
        shard = remainder.subset(indices)
        train, val = train_val_split(
            shard,
            train_fraction=data.train_fraction,
            seed=seeding.derive_seed(fed.seed, seeding.TAG_CLIENT_SPLIT, client_id),
        )
        clients.append(make_client(client_id, train, val))
    spec = ModelSpec(
        input_dim=test_set.dim,
        hidden_dims=data.hidden_dims,
        num_classes=test_set.num_classes,
    )
    return ExperimentEnv(
        clients=tuple(clients),
        public_train=public_train,
        public_val=public_val,
        test_set=test_set,
        model_spec=spec,
    )


def run_from_config(config: RunConfig) -> tuple[ExperimentResult, ExperimentEnv]:
    env = build_environment(config)
    return run_experiment(config.federation, env), env
