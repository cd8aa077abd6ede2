"""Round engine: client sampling, local updates, aggregation, server phase.

A communication round runs in a fixed order: sample participants, run each
participant's local update starting from the previous global model, average
the updated models weighted by local data size, optionally distill or
fine-tune the averaged model on the public dataset, and finally fold the
participants' label counts into the server's accumulated estimate. The
estimate update deliberately comes last: every model trained during round t
sees the estimate exactly as it stood at the end of round t-1.

Supported algorithms:

- ``fedavg``: plain local cross-entropy, weighted averaging.
- ``fedntd``: local not-true distillation against the global model,
  weighted averaging.
- ``flashback``: local dynamic distillation with the global model as the
  single teacher, then server-side dynamic distillation on the public set
  against the participants' models and the previous global model.
- ``flashback-local-only`` / ``flashback-server-only``: each half of
  flashback in isolation (the other side falls back to the fedavg behavior).
- ``flashback-ntd``: flashback's server side with not-true distillation as
  the local objective.
- ``fedavg-finetune``: fedavg plus plain cross-entropy fine-tuning of the
  averaged model on the public training set each round.

Local updates for distinct clients share no mutable state and draw from
streams keyed by (seed, round, client id), so results are identical for any
degree of parallelism. The ``FEDSIM_THREADS`` environment variable caps the
thread count (0 or unset = auto).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import seeding
from .data import LabeledDataset
from .knowledge import client_label_count, compute_alpha, update_global_count
from .losses import cross_entropy, dynamic_kd_loss, ntd_loss
from .metrics import RoundRecord, evaluate_model
from .nn import ModelParams, ModelSpec, backward, forward_logits, init_params, sgd_step

ALGORITHMS = (
    "fedavg",
    "flashback",
    "fedntd",
    "flashback-local-only",
    "flashback-server-only",
    "flashback-ntd",
    "fedavg-finetune",
)

# Variants that maintain the accumulated global label count.
_COUNT_TRACKING = {
    "flashback",
    "flashback-local-only",
    "flashback-server-only",
    "flashback-ntd",
}
_LOCAL_DKD = {"flashback", "flashback-local-only"}
_LOCAL_NTD = {"fedntd", "flashback-ntd"}
_SERVER_DISTILL = {"flashback", "flashback-server-only", "flashback-ntd"}


@dataclass(frozen=True)
class FederationConfig:
    """Hyperparameters of one simulated federation run."""

    num_clients: int
    participation: float
    rounds: int
    batch_size: int
    learning_rate: float
    algorithm: str
    seed: int
    local_epochs: int = 5
    server_epochs: int = 50
    server_learning_rate: float | None = None
    gamma: float = 0.025
    temperature: float = 3.0
    patience: int = 3
    ntd_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be positive, got {self.num_clients}")
        if not 0.0 < self.participation <= 1.0:
            raise ValueError(f"participation must lie in (0, 1], got {self.participation}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be non-negative, got {self.rounds}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"algorithm must be one of {', '.join(ALGORITHMS)}, got {self.algorithm!r}"
            )
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.local_epochs < 0:
            raise ValueError(f"local_epochs must be non-negative, got {self.local_epochs}")
        if self.server_epochs < 0:
            raise ValueError(f"server_epochs must be non-negative, got {self.server_epochs}")
        if self.server_learning_rate is not None and self.server_learning_rate <= 0:
            raise ValueError(
                f"server_learning_rate must be positive, got {self.server_learning_rate}"
            )
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.patience < 1:
            raise ValueError(f"patience must be positive, got {self.patience}")
        if self.ntd_weight < 0:
            raise ValueError(f"ntd_weight must be non-negative, got {self.ntd_weight}")

    @property
    def effective_server_lr(self) -> float:
        return self.learning_rate if self.server_learning_rate is None else self.server_learning_rate


@dataclass(frozen=True)
class ClientState:
    """One client's immutable data shard and its label count."""

    client_id: int
    train: LabeledDataset
    val: LabeledDataset | None
    label_count: np.ndarray

    @property
    def num_train(self) -> int:
        return len(self.train)


def make_client(client_id: int, train: LabeledDataset, val: LabeledDataset | None) -> ClientState:
    return ClientState(client_id, train, val, client_label_count(train.labels, train.num_classes))


@dataclass(frozen=True)
class FederationState:
    """Server-side state carried between rounds."""

    round_index: int
    params: ModelParams
    global_count: np.ndarray
    registry: dict[int, int]
    clients: tuple[ClientState, ...]
    public_train: LabeledDataset
    public_val: LabeledDataset


def sample_clients(num_clients: int, participation: float, seed: int, round_index: int) -> tuple[int, ...]:
    """ceil(participation * num_clients) distinct ids, uniform without replacement.

    The ceiling is taken after snapping away one part in 10^9 so that binary
    fractions like 0.1 * 100 select 10 clients, not 11.
    """
    size = math.ceil(participation * num_clients - 1e-9)
    size = min(num_clients, max(1, size))
    rng = seeding.stream(seed, seeding.TAG_SAMPLE, round_index)
    chosen = rng.choice(num_clients, size=size, replace=False)
    return tuple(int(i) for i in np.sort(chosen))


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def local_update(
    algorithm: str,
    params: ModelParams,
    client: ClientState,
    global_count: np.ndarray,
    cfg: FederationConfig,
    round_index: int,
    loss_log: list[float] | None = None,
) -> ModelParams:
    """Run one client's local epochs starting from the current global model.

    The incoming ``params`` double as the frozen teacher for the distilling
    variants. Deterministic in (seed, round, client id).
    """
    n = client.num_train
    if n == 0:
        raise ValueError(f"client {client.client_id} has no training data")
    features, labels = client.train.features, client.train.labels
    if algorithm in _LOCAL_DKD:
        alpha = compute_alpha(client.label_count, [global_count])
    rng = seeding.stream(cfg.seed, seeding.TAG_CLIENT, round_index, client.client_id)
    current = params
    for _ in range(cfg.local_epochs):
        for batch in _minibatches(n, cfg.batch_size, rng):
            bx, by = features[batch], labels[batch]
            logits = forward_logits(current, bx)
            if algorithm in _LOCAL_DKD:
                teacher_logits = forward_logits(params, bx)
                loss, dlogits = dynamic_kd_loss(
                    logits, [teacher_logits], by, alpha, cfg.temperature
                )
            elif algorithm in _LOCAL_NTD:
                teacher_logits = forward_logits(params, bx)
                loss, dlogits = ntd_loss(
                    logits, teacher_logits, by, cfg.ntd_weight, cfg.temperature
                )
            else:
                loss, dlogits = cross_entropy(logits, by)
            if loss_log is not None:
                loss_log.append(loss)
            current = sgd_step(current, backward(current, bx, dlogits), cfg.learning_rate)
    return current


def fedavg_aggregate(models: Sequence[ModelParams], sizes: Sequence[int]) -> ModelParams:
    """Data-size weighted parameter average.

    Computed relative to the first model so that averaging identical models
    returns them unchanged.
    """
    if len(models) == 0:
        raise ValueError("nothing to aggregate")
    if len(models) != len(sizes):
        raise ValueError(f"{len(models)} models but {len(sizes)} sizes")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"sizes must be positive, got {list(sizes)}")
    base = models[0].values
    total = float(sum(sizes))
    delta = np.zeros_like(base)
    for model, size in zip(models, sizes):
        if model.values.shape != base.shape:
            raise ValueError("parameter vectors have mismatched lengths")
        delta += (size / total) * (model.values - base)
    return ModelParams(models[0].spec, base + delta)


def _train_until_stalled(
    start: ModelParams,
    run_epoch: Callable[[ModelParams, np.random.Generator], ModelParams],
    val_loss: Callable[[ModelParams], float],
    rng: np.random.Generator,
    max_epochs: int,
    patience: int,
) -> tuple[ModelParams, int]:
    """Epoch loop with early stopping on validation loss, restoring the best.

    The starting parameters count as the epoch-0 baseline, so the result is
    never worse than the input on the validation metric.
    """
    best, best_loss, wait = start, val_loss(start), 0
    current = start
    epochs_run = 0
    for _ in range(max_epochs):
        current = run_epoch(current, rng)
        epochs_run += 1
        loss = val_loss(current)
        if loss < best_loss:
            best, best_loss, wait = current, loss, 0
        else:
            wait += 1
            if wait >= patience:
                break
    return best, epochs_run


def server_distill(
    aggregated: ModelParams,
    previous: ModelParams,
    local_models: Sequence[ModelParams],
    local_counts: Sequence[np.ndarray],
    global_count: np.ndarray,
    public_train: LabeledDataset,
    public_val: LabeledDataset,
    cfg: FederationConfig,
    round_index: int,
) -> tuple[ModelParams, int]:
    """Distill the participants' models and the previous global model into
    the freshly averaged one, using the public dataset as the medium.

    The student's label count is the accumulated global count as it stood
    before this round's update; the previous global model teaches under that
    same count (in round one both are zero, so the untrained initial model
    gets zero weight everywhere). Stops early once the public-validation
    distillation loss has not improved for ``patience`` epochs and returns
    the best-validation parameters.
    """
    if len(public_train) == 0 or len(public_val) == 0:
        raise ValueError("server distillation requires non-empty public data")
    if len(local_models) != len(local_counts):
        raise ValueError(f"{len(local_models)} models but {len(local_counts)} counts")
    if cfg.server_epochs == 0:
        return aggregated, 0
    teachers = [*local_models, previous]
    alpha = compute_alpha(global_count, [*local_counts, global_count])
    # Teachers are frozen: their logits on the fixed public sets never change.
    train_teacher_logits = [forward_logits(t, public_train.features) for t in teachers]
    val_teacher_logits = [forward_logits(t, public_val.features) for t in teachers]

    def run_epoch(current: ModelParams, rng: np.random.Generator) -> ModelParams:
        for batch in _minibatches(len(public_train), cfg.batch_size, rng):
            bx, by = public_train.features[batch], public_train.labels[batch]
            logits = forward_logits(current, bx)
            _, dlogits = dynamic_kd_loss(
                logits, [t[batch] for t in train_teacher_logits], by, alpha, cfg.temperature
            )
            current = sgd_step(current, backward(current, bx, dlogits), cfg.effective_server_lr)
        return current

    def val_loss(current: ModelParams) -> float:
        logits = forward_logits(current, public_val.features)
        loss, _ = dynamic_kd_loss(
            logits, val_teacher_logits, public_val.labels, alpha, cfg.temperature
        )
        return loss

    rng = seeding.stream(cfg.seed, seeding.TAG_SERVER, round_index)
    return _train_until_stalled(
        aggregated, run_epoch, val_loss, rng, cfg.server_epochs, cfg.patience
    )


def finetune_public(
    aggregated: ModelParams,
    public_train: LabeledDataset,
    public_val: LabeledDataset,
    cfg: FederationConfig,
    round_index: int,
) -> tuple[ModelParams, int]:
    """Plain cross-entropy fine-tuning on the public set with the same
    early-stopping rule as server distillation."""
    if len(public_train) == 0 or len(public_val) == 0:
        raise ValueError("fine-tuning requires non-empty public data")
    if cfg.server_epochs == 0:
        return aggregated, 0

    def run_epoch(current: ModelParams, rng: np.random.Generator) -> ModelParams:
        for batch in _minibatches(len(public_train), cfg.batch_size, rng):
            bx, by = public_train.features[batch], public_train.labels[batch]
            _, dlogits = cross_entropy(forward_logits(current, bx), by)
            current = sgd_step(current, backward(current, bx, dlogits), cfg.effective_server_lr)
        return current

    def val_loss(current: ModelParams) -> float:
        loss, _ = cross_entropy(forward_logits(current, public_val.features), public_val.labels)
        return loss

    rng = seeding.stream(cfg.seed, seeding.TAG_SERVER, round_index)
    return _train_until_stalled(
        aggregated, run_epoch, val_loss, rng, cfg.server_epochs, cfg.patience
    )


def resolve_threads(num_tasks: int) -> int:
    """Thread count for client updates, capped by FEDSIM_THREADS (0 = auto)."""
    raw = os.environ.get("FEDSIM_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"FEDSIM_THREADS must be an integer, got {raw!r}") from None
    if cap < 0:
        raise ValueError(f"FEDSIM_THREADS must be non-negative, got {cap}")
    if cap == 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, num_tasks))


def run_round(
    state: FederationState, cfg: FederationConfig, test_set: LabeledDataset
) -> tuple[FederationState, RoundRecord]:
    """Execute one communication round and measure it on the test set."""
    t = state.round_index + 1
    participants = sample_clients(cfg.num_clients, cfg.participation, cfg.seed, t)
    selected = [state.clients[i] for i in participants]

    def update(client: ClientState) -> ModelParams:
        return local_update(cfg.algorithm, state.params, client, state.global_count, cfg, t)

    threads = resolve_threads(len(selected))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            local_models = list(pool.map(update, selected))
    else:
        local_models = [update(client) for client in selected]

    sizes = [client.num_train for client in selected]
    aggregated = fedavg_aggregate(local_models, sizes)

    if cfg.algorithm in _SERVER_DISTILL:
        new_params, server_epochs = server_distill(
            aggregated,
            state.params,
            local_models,
            [client.label_count for client in selected],
            state.global_count,
            state.public_train,
            state.public_val,
            cfg,
            t,
        )
    elif cfg.algorithm == "fedavg-finetune":
        new_params, server_epochs = finetune_public(
            aggregated, state.public_train, state.public_val, cfg, t
        )
    else:
        new_params, server_epochs = aggregated, 0

    if cfg.algorithm in _COUNT_TRACKING:
        new_count, new_registry = update_global_count(
            state.global_count,
            state.registry,
            [(client.client_id, client.label_count) for client in selected],
            cfg.gamma,
        )
    else:
        new_count, new_registry = state.global_count, dict(state.registry)

    prev_eval = evaluate_model(state.params, test_set)
    client_evals = {
        client.client_id: evaluate_model(model, test_set)
        for client, model in zip(selected, local_models)
    }
    new_eval = evaluate_model(new_params, test_set)
    record = RoundRecord(
        round_index=t,
        participants=participants,
        prev_global_class_acc=prev_eval.class_accuracy,
        client_class_acc={k: e.class_accuracy for k, e in client_evals.items()},
        global_class_acc=new_eval.class_accuracy,
        global_acc=new_eval.accuracy,
        mean_local_test_loss=float(np.mean([e.test_loss for e in client_evals.values()])),
        global_test_loss=new_eval.test_loss,
        server_distill_epochs=server_epochs,
    )
    new_state = replace(
        state,
        round_index=t,
        params=new_params,
        global_count=new_count,
        registry=new_registry,
    )
    return new_state, record


@dataclass(frozen=True)
class ExperimentEnv:
    """Immutable inputs of a run: clients, public sets, test set, architecture."""

    clients: tuple[ClientState, ...]
    public_train: LabeledDataset
    public_val: LabeledDataset
    test_set: LabeledDataset
    model_spec: ModelSpec


@dataclass(frozen=True)
class ExperimentResult:
    """Per-round records plus the accuracy matrix (row 0 = initial model)."""

    config: FederationConfig
    records: tuple[RoundRecord, ...]
    accuracy_matrix: np.ndarray
    initial_accuracy: float
    initial_test_loss: float
    final_state: FederationState

    @property
    def accuracy_trace(self) -> list[float]:
        return [record.global_acc for record in self.records]


def run_experiment(cfg: FederationConfig, env: ExperimentEnv) -> ExperimentResult:
    """Drive the round loop for cfg.rounds rounds; fully seed-deterministic."""
    if len(env.clients) != cfg.num_clients:
        raise ValueError(
            f"config expects {cfg.num_clients} clients, environment has {len(env.clients)}"
        )
    num_classes = env.test_set.num_classes
    initial = init_params(env.model_spec, seeding.derive_seed(cfg.seed, seeding.TAG_INIT))
    state = FederationState(
        round_index=0,
        params=initial,
        global_count=np.zeros(num_classes),
        registry={},
        clients=env.clients,
        public_train=env.public_train,
        public_val=env.public_val,
    )
    initial_eval = evaluate_model(initial, env.test_set)
    accuracy_rows = [initial_eval.class_accuracy]
    records: list[RoundRecord] = []
    for _ in range(cfg.rounds):
        state, record = run_round(state, cfg, env.test_set)
        records.append(record)
        accuracy_rows.append(record.global_class_acc)
    return ExperimentResult(
        config=cfg,
        records=tuple(records),
        accuracy_matrix=np.stack(accuracy_rows),
        initial_accuracy=initial_eval.accuracy,
        initial_test_loss=initial_eval.test_loss,
        final_state=state,
    )
