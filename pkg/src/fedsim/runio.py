"""Run-directory persistence and readers.

A run directory holds four artifacts:

- ``manifest.json``: config snapshot, seed, code version, test-set hash,
  wall-clock duration, and the list of emitted files.
- ``metrics.jsonl``: one self-contained JSON record per round with the fields
  round, global_acc, per_class_acc, round_forgetting, local_forgetting,
  aggregation_forgetting, mean_local_test_loss, global_test_loss,
  participants, server_distill_epochs. Round forgetting is null for round 1
  because drops from the untrained initial model are excluded.
- ``accuracy_matrix.csv``: per-class test accuracy per round, row 0 = initial
  model.
- ``checkpoint.json``: final round index, flat parameters (base64 of 64-bit
  little-endian floats), the accumulated label count, and the participation
  registry.

All floats are written with 17 significant digits so a rerun with the same
config and seed reproduces every file byte for byte.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import RunConfig, parse_config, serialize_config
from .data import LabeledDataset
from .federation import ExperimentResult
from .metrics import RoundRecord, forgetting_decomposition, one_sided_drop
from .nn import ModelParams, ModelSpec

MANIFEST = "manifest.json"
METRICS = "metrics.jsonl"
ACCURACY_MATRIX = "accuracy_matrix.csv"
CHECKPOINT = "checkpoint.json"
ARTIFACTS = (MANIFEST, METRICS, ACCURACY_MATRIX, CHECKPOINT)


def format_float(value: float) -> str:
    """17-significant-digit decimal form; round-trips any float64 exactly."""
    if math.isnan(value):
        return "nan"
    return format(float(value), ".17g")


def dumps_stable(obj) -> str:
    """Serialize to JSON with 17-significant-digit floats (NaN becomes null)."""
    pieces: list[str] = []
    _encode(obj, pieces)
    return "".join(pieces)


def _encode(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        out.append("null" if math.isnan(value) else format_float(value))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(", ")
            _encode(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                out.append(", ")
            out.append(json.dumps(str(key)))
            out.append(": ")
            _encode(value, out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def test_set_hash(dataset: LabeledDataset) -> str:
    digest = hashlib.sha256()
    digest.update(str(dataset.num_classes).encode())
    digest.update(np.ascontiguousarray(dataset.features).tobytes())
    digest.update(np.ascontiguousarray(dataset.labels).tobytes())
    return digest.hexdigest()


def record_to_dict(record: RoundRecord) -> dict:
    """Flatten one round record into the metrics.jsonl field order."""
    local, aggregation = forgetting_decomposition(record)
    if record.round_index >= 2:
        drop = one_sided_drop(record.prev_global_class_acc, record.global_class_acc)
    else:
        drop = None
    return {
        "round": record.round_index,
        "global_acc": record.global_acc,
        "per_class_acc": list(record.global_class_acc),
        "round_forgetting": drop,
        "local_forgetting": local,
        "aggregation_forgetting": aggregation,
        "mean_local_test_loss": record.mean_local_test_loss,
        "global_test_loss": record.global_test_loss,
        "participants": list(record.participants),
        "server_distill_epochs": record.server_distill_epochs,
    }


def encode_params(params: ModelParams) -> str:
    return base64.b64encode(params.values.astype("<f8").tobytes()).decode("ascii")


def decode_params(spec: ModelSpec, encoded: str) -> ModelParams:
    values = np.frombuffer(base64.b64decode(encoded), dtype="<f8")
    return ModelParams(spec, values.astype(np.float64))


def write_run_dir(
    out_dir: str,
    config: RunConfig,
    result: ExperimentResult,
    test_set: LabeledDataset,
    duration_seconds: float,
) -> None:
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, METRICS), "w", encoding="utf-8", newline="\n") as handle:
        for record in result.records:
            handle.write(dumps_stable(record_to_dict(record)))
            handle.write("\n")

    matrix = result.accuracy_matrix
    num_classes = matrix.shape[1]
    with open(
        os.path.join(out_dir, ACCURACY_MATRIX), "w", encoding="utf-8", newline="\n"
    ) as handle:
        handle.write("round," + ",".join(f"class_{c}" for c in range(num_classes)) + "\n")
        for t, row in enumerate(matrix):
            handle.write(str(t) + "," + ",".join(format_float(v) for v in row) + "\n")

    state = result.final_state
    checkpoint = {
        "round": state.round_index,
        "layer_dims": state.params.spec.layer_dims,
        "params_b64": encode_params(state.params),
        "global_label_count": state.global_count,
        "participation_rounds": {str(k): v for k, v in sorted(state.registry.items())},
    }
    with open(os.path.join(out_dir, CHECKPOINT), "w", encoding="utf-8", newline="\n") as handle:
        handle.write(dumps_stable(checkpoint))
        handle.write("\n")

    manifest = {
        "version": __version__,
        "seed": config.federation.seed,
        "num_classes": num_classes,
        "test_set_hash": test_set_hash(test_set),
        "config": serialize_config(config),
        "artifacts": list(ARTIFACTS),
        "duration_seconds": duration_seconds,
    }
    with open(os.path.join(out_dir, MANIFEST), "w", encoding="utf-8", newline="\n") as handle:
        handle.write(dumps_stable(manifest))
        handle.write("\n")


@dataclass(frozen=True)
class RunData:
    """Parsed contents of a run directory."""

    manifest: dict
    records: list[dict]
    accuracy_matrix: np.ndarray

    @property
    def config(self) -> RunConfig:
        return parse_config(self.manifest["config"])

    @property
    def accuracy_trace(self) -> list[float]:
        return [record["global_acc"] for record in self.records]


def read_run_dir(run_dir: str) -> RunData:
    manifest_path = os.path.join(run_dir, MANIFEST)
    try:
        with open(manifest_path, encoding="utf-8") as handle:
            manifest = json.load(handle)
    except OSError as exc:
        raise ValueError(f"{run_dir} is not a run directory: {exc}") from None
    records = []
    with open(os.path.join(run_dir, METRICS), encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(json.loads(line))
    with open(os.path.join(run_dir, ACCURACY_MATRIX), encoding="utf-8") as handle:
        header = handle.readline()
        num_classes = len(header.strip().split(",")) - 1
        rows = []
        for line in handle:
            cells = line.strip().split(",")
            rows.append([float(cell) for cell in cells[1:]])
    matrix = np.array(rows) if rows else np.zeros((0, num_classes))
    return RunData(manifest=manifest, records=records, accuracy_matrix=matrix)


def load_checkpoint(path: str) -> tuple[int, ModelParams, np.ndarray, dict[int, int]]:
    with open(path, encoding="utf-8") as handle:
        doc = json.load(handle)
    dims = doc["layer_dims"]
    spec = ModelSpec(input_dim=dims[0], hidden_dims=tuple(dims[1:-1]), num_classes=dims[-1])
    params = decode_params(spec, doc["params_b64"])
    count = np.array(doc["global_label_count"], dtype=np.float64)
    registry = {int(k): int(v) for k, v in doc["participation_rounds"].items()}
    return doc["round"], params, count, registry
