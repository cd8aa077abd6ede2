"""Run configuration: a strict JSON document.

The document carries exactly the federation hyperparameters plus a ``data``
section describing either a synthetic blob problem or a CSV dataset together
with the partition and public-split settings. Unknown keys are rejected so a
typo in a sweep fails loudly instead of silently using a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

from .federation import FederationConfig


class ConfigError(ValueError):
    """Invalid or malformed run configuration."""


_TOP_KEYS = {
    "algorithm",
    "num_clients",
    "participation",
    "rounds",
    "local_epochs",
    "server_epochs",
    "batch_size",
    "learning_rate",
    "server_learning_rate",
    "gamma",
    "temperature",
    "patience",
    "ntd_weight",
    "seed",
    "data",
}
_REQUIRED_TOP = {
    "algorithm",
    "num_clients",
    "participation",
    "rounds",
    "batch_size",
    "learning_rate",
    "seed",
    "data",
}
_DATA_COMMON = {
    "kind",
    "test_fraction",
    "train_fraction",
    "beta",
    "min_per_client",
    "public_fraction",
    "public_val_fraction",
    "public_imbalance_decay",
    "hidden_dims",
}
_DATA_KEYS = {
    "synthetic": _DATA_COMMON | {"num_classes", "dim", "num_samples", "separation", "noise"},
    "csv": _DATA_COMMON | {"path", "test_path", "num_classes"},
}
_REQUIRED_DATA = {
    "synthetic": {"kind", "num_classes", "dim", "num_samples", "separation", "noise"},
    "csv": {"kind", "path"},
}


@dataclass(frozen=True)
class DataConfig:
    """Resolved data section; exactly one of the synthetic/csv field groups applies."""

    kind: str
    test_fraction: float = 0.2
    train_fraction: float = 0.9
    beta: float = 0.1
    min_per_client: int | None = None
    public_fraction: float = 0.025
    public_val_fraction: float = 0.25
    public_imbalance_decay: float | None = None
    hidden_dims: tuple[int, ...] = (32,)
    # synthetic
    num_classes: int | None = None
    dim: int | None = None
    num_samples: int | None = None
    separation: float | None = None
    noise: float | None = None
    # csv
    path: str | None = None
    test_path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    federation: FederationConfig
    data: DataConfig


def _require(value: object, field: str, kinds: tuple[type, ...], allow_none: bool = False):
    if value is None:
        if allow_none:
            return None
        raise ConfigError(f"{field}: must not be null")
    if isinstance(value, bool) or not isinstance(value, kinds):
        names = "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{field}: expected {names}, got {type(value).__name__}")
    return value


def _as_int(doc: dict, field: str, default: int | None = None, allow_none: bool = False):
    value = doc.get(field, default)
    return _require(value, field, (int,), allow_none)


def _as_float(doc: dict, field: str, default: float | None = None, allow_none: bool = False):
    value = doc.get(field, default)
    value = _require(value, field, (int, float), allow_none)
    return None if value is None else float(value)


def _as_str(doc: dict, field: str, default: str | None = None, allow_none: bool = False):
    value = doc.get(field, default)
    return _require(value, field, (str,), allow_none)


def parse_config(document: dict) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig."""
    if not isinstance(document, dict):
        raise ConfigError(f"config root must be an object, got {type(document).__name__}")
    unknown = set(document) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    missing = _REQUIRED_TOP - set(document)
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(sorted(missing))}")

    data_doc = document["data"]
    if not isinstance(data_doc, dict):
        raise ConfigError("data: must be an object")
    kind = _as_str(data_doc, "kind", "synthetic")
    if kind not in _DATA_KEYS:
        raise ConfigError(f"data.kind: must be 'synthetic' or 'csv', got {kind!r}")
    unknown = set(data_doc) - _DATA_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown data keys for kind {kind!r}: {', '.join(sorted(unknown))}")
    missing = _REQUIRED_DATA[kind] - set(data_doc) - {"kind"}
    if missing:
        raise ConfigError(f"missing data keys for kind {kind!r}: {', '.join(sorted(missing))}")

    hidden = data_doc.get("hidden_dims", [32])
    if not isinstance(hidden, list) or any(
        isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in hidden
    ):
        raise ConfigError("data.hidden_dims: expected a list of positive integers")

    try:
        federation = FederationConfig(
            num_clients=_as_int(document, "num_clients"),
            participation=_as_float(document, "participation"),
            rounds=_as_int(document, "rounds"),
            batch_size=_as_int(document, "batch_size"),
            learning_rate=_as_float(document, "learning_rate"),
            algorithm=_as_str(document, "algorithm"),
            seed=_as_int(document, "seed"),
            local_epochs=_as_int(document, "local_epochs", 5),
            server_epochs=_as_int(document, "server_epochs", 50),
            server_learning_rate=_as_float(
                document, "server_learning_rate", None, allow_none=True
            ),
            gamma=_as_float(document, "gamma", 0.025),
            temperature=_as_float(document, "temperature", 3.0),
            patience=_as_int(document, "patience", 3),
            ntd_weight=_as_float(document, "ntd_weight", 1.0),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    min_per_client = _as_int(data_doc, "min_per_client", None, allow_none=True)
    if min_per_client is None:
        min_per_client = 2 * federation.batch_size
    elif min_per_client < 2:
        raise ConfigError(f"data.min_per_client: must be at least 2, got {min_per_client}")

    try:
        data = DataConfig(
            kind=kind,
            test_fraction=_as_float(data_doc, "test_fraction", 0.2),
            train_fraction=_as_float(data_doc, "train_fraction", 0.9),
            beta=_as_float(data_doc, "beta", 0.1),
            min_per_client=min_per_client,
            public_fraction=_as_float(data_doc, "public_fraction", 0.025),
            public_val_fraction=_as_float(data_doc, "public_val_fraction", 0.25),
            public_imbalance_decay=_as_float(
                data_doc, "public_imbalance_decay", None, allow_none=True
            ),
            hidden_dims=tuple(hidden),
            num_classes=_as_int(data_doc, "num_classes", None, allow_none=True),
            dim=_as_int(data_doc, "dim", None, allow_none=True),
            num_samples=_as_int(data_doc, "num_samples", None, allow_none=True),
            separation=_as_float(data_doc, "separation", None, allow_none=True),
            noise=_as_float(data_doc, "noise", None, allow_none=True),
            path=_as_str(data_doc, "path", None, allow_none=True),
            test_path=_as_str(data_doc, "test_path", None, allow_none=True),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(federation, data)


def serialize_config(config: RunConfig) -> dict:
    """Normalized document with every field explicit; parse(serialize(c)) == c."""
    fed = config.federation
    data = {k: v for k, v in asdict(config.data).items()}
    data["hidden_dims"] = list(config.data.hidden_dims)
    # Drop the field group that does not apply to this kind.
    inactive = (
        ("path", "test_path")
        if config.data.kind == "synthetic"
        else ("dim", "num_samples", "separation", "noise")
    )
    for key in inactive:
        data.pop(key, None)
    if config.data.kind == "csv" and config.data.num_classes is None:
        data.pop("num_classes")
    return {
        "algorithm": fed.algorithm,
        "num_clients": fed.num_clients,
        "participation": fed.participation,
        "rounds": fed.rounds,
        "local_epochs": fed.local_epochs,
        "server_epochs": fed.server_epochs,
        "batch_size": fed.batch_size,
        "learning_rate": fed.learning_rate,
        "server_learning_rate": fed.server_learning_rate,
        "gamma": fed.gamma,
        "temperature": fed.temperature,
        "patience": fed.patience,
        "ntd_weight": fed.ntd_weight,
        "seed": fed.seed,
        "data": data,
    }


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_config(document)
