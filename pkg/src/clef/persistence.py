"""Dataset and checkpoint file formats.

Datasets are line-oriented JSON: one trajectory object per line with fields
{id, timestamps, values, conditions, cf_of?, divergence?}. Checkpoints are
a single JSON document whose parameter blocks carry base-16 little-endian
float64 payloads, so round trips are bit-exact across platforms.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import ConditionalForecaster, SimpleLinearModel, VARModel
from .conditions import ConditionRegistry
from .counterfactual import OutcomePredictor, OutcomePredictorConfig
from .errors import ClefError, DatasetFormatError
from .model import ClefConfig, ClefModel
from .timeenc import parse_timestamp
from .trajectory import CounterfactualPair, Trajectory

FORMAT_VERSION = 1


# ----------------------------------------------------------------------
# datasets

def trajectory_to_record(traj: Trajectory) -> dict:
    record = {
        "id": traj.id,
        "timestamps": [t.iso() for t in traj.timestamps],
        "values": [[float(v) for v in row] for row in traj.values],
        "conditions": [list(c) for c in traj.conditions],
    }
    if traj.cf_of is not None:
        record["cf_of"] = traj.cf_of
        record["divergence"] = traj.divergence
    return record


def record_to_trajectory(record: dict, line: int | None = None) -> Trajectory:
    required = ("id", "timestamps", "values", "conditions")
    for key in required:
        if key not in record:
            raise DatasetFormatError(f"missing field {key!r}", line=line)
    if not isinstance(record["id"], str) or not record["id"]:
        raise DatasetFormatError("id must be a non-empty string", line=line)
    try:
        timestamps = [parse_timestamp(t) for t in record["timestamps"]]
    except ClefError as exc:
        raise DatasetFormatError(str(exc), line=line) from None
    values = np.asarray(record["values"], dtype=np.float64)
    conditions = record["conditions"]
    if not isinstance(conditions, list) or not all(
        isinstance(c, list) and all(isinstance(t, str) for t in c) for c in conditions
    ):
        raise DatasetFormatError("conditions must be a list of string lists", line=line)
    cf_of = record.get("cf_of")
    divergence = record.get("divergence")
    if cf_of is not None and not isinstance(divergence, int):
        raise DatasetFormatError("cf_of requires an integer divergence", line=line)
    try:
        return Trajectory(
            id=record["id"], timestamps=timestamps, values=values,
            conditions=conditions, cf_of=cf_of, divergence=divergence,
        )
    except ClefError as exc:
        raise DatasetFormatError(str(exc), line=line) from None


def write_dataset(path: str | Path, trajectories: list[Trajectory]) -> None:
    lines = [json.dumps(trajectory_to_record(t), separators=(",", ":")) for t in trajectories]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path: str | Path) -> list[Trajectory]:
    out: list[Trajectory] = []
    ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", line=lineno) from None
            traj = record_to_trajectory(record, line=lineno)
            if traj.id in ids:
                raise DatasetFormatError(f"duplicate id {traj.id!r}", line=lineno)
            ids.add(traj.id)
            out.append(traj)
    for traj in out:
        if traj.cf_of is not None and traj.cf_of not in ids:
            raise DatasetFormatError(f"unresolvable cf_of {traj.cf_of!r} for {traj.id!r}")
    return out


def counterfactual_pairs(trajectories: list[Trajectory]) -> list[CounterfactualPair]:
    by_id = {t.id: t for t in trajectories}
    pairs = []
    for traj in trajectories:
        if traj.cf_of is not None:
            original = by_id.get(traj.cf_of)
            if original is None:
                raise ClefError(f"counterfactual {traj.id} has no original in this set")
            pairs.append(CounterfactualPair(original=original, counterfactual=traj,
                                            divergence=traj.divergence))
    return pairs


# ----------------------------------------------------------------------
# checkpoints

def _encode_array(arr: np.ndarray) -> str:
    return arr.astype("<f8").tobytes().hex()


def _decode_array(payload: str, shape: list[int]) -> np.ndarray:
    data = np.frombuffer(bytes.fromhex(payload), dtype="<f8").astype(np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise DatasetFormatError(f"parameter payload has {data.size} values, expected {expected}")
    return data.reshape(shape)


def write_checkpoint(path: str | Path, model, train_seed: int | None = None,
                     train_ids: list[str] | None = None,
                     extra: dict | None = None) -> None:
    header: dict = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "train_seed": train_seed,
        "variable_names": list(model.variable_names),
    }
    if model.kind == "clef":
        header["config"] = model.config.to_dict()
        header["registry"] = {"mode": model.registry.mode, "dim": model.registry.dim}
    elif model.kind == "forecaster":
        header["config"] = model.config.to_dict()
        header["registry"] = {"mode": model.registry.mode, "dim": model.registry.dim}
    elif model.kind == "simple_linear":
        header["config"] = {"n_variables": model.config.n_variables,
                            "condition_dim": model.config.condition_dim}
    elif model.kind == "var":
        header["config"] = {"order": model.order, "n_variables": model.n_variables}
    elif model.kind == "outcome":
        header["config"] = model.config.to_dict()
        header["registry"] = {"mode": model.registry.mode, "dim": model.registry.dim}
    else:
        raise ClefError(f"cannot checkpoint model kind {model.kind!r}")
    if hasattr(model, "norm_mean"):
        header["normalization"] = {
            "mean": _encode_array(np.asarray(model.norm_mean)),
            "std": _encode_array(np.asarray(model.norm_std)),
            "dim": int(np.asarray(model.norm_mean).size),
        }
    if train_ids is not None:
        header["train_ids"] = sorted(train_ids)
    if extra:
        header["extra"] = extra
    blocks = []
    if model.kind == "var":
        blocks.append({"name": "var.intercept", "shape": [model.n_variables],
                       "data": _encode_array(model.intercept)})
        for r, coef in enumerate(model.coefs):
            blocks.append({"name": f"var.coef{r}", "shape": list(coef.shape),
                           "data": _encode_array(coef)})
    else:
        for name, tensor in model.parameters():
            blocks.append({"name": name, "shape": tensor.shape,
                           "data": _encode_array(tensor.array)})
    document = {"header": header, "parameters": blocks}
    Path(path).write_text(json.dumps(document, separators=(",", ":")) + "\n", encoding="utf-8")


def read_checkpoint(path: str | Path):
    """Rebuild a model from a checkpoint; returns (model, header)."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"checkpoint is not valid JSON ({exc.msg})") from None
    header = document.get("header")
    blocks = document.get("parameters")
    if not isinstance(header, dict) or not isinstance(blocks, list):
        raise DatasetFormatError("checkpoint missing header or parameters")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})"
        )
    kind = header.get("kind")
    names = header.get("variable_names")
    rng = np.random.default_rng(0)

    if kind == "var":
        by_name = {b["name"]: b for b in blocks}
        config = header["config"]
        intercept = _decode_array(**_block_args(by_name, "var.intercept"))
        coefs = [
            _decode_array(**_block_args(by_name, f"var.coef{r}"))
            for r in range(config["order"])
        ]
        model = VARModel(order=config["order"], intercept=intercept, coefs=coefs,
                         variable_names=names)
        return model, header

    if kind == "clef":
        registry = ConditionRegistry(dim=header["registry"]["dim"],
                                     mode=header["registry"]["mode"])
        model = ClefModel(ClefConfig.from_dict(header["config"]), registry, rng,
                          variable_names=names)
    elif kind == "forecaster":
        registry = ConditionRegistry(dim=header["registry"]["dim"],
                                     mode=header["registry"]["mode"])
        model = ConditionalForecaster(ClefConfig.from_dict(header["config"]), registry, rng,
                                      variable_names=names)
    elif kind == "simple_linear":
        model = SimpleLinearModel(n_variables=header["config"]["n_variables"],
                                  condition_dim=header["config"]["condition_dim"],
                                  variable_names=names)
    elif kind == "outcome":
        registry = ConditionRegistry(dim=header["registry"]["dim"],
                                     mode=header["registry"]["mode"])
        model = OutcomePredictor(OutcomePredictorConfig.from_dict(header["config"]),
                                 registry, rng)
    else:
        raise DatasetFormatError(f"unknown model kind {kind!r}")

    if "normalization" in header and hasattr(model, "set_normalization"):
        norm = header["normalization"]
        dim = [norm["dim"]]
        model.set_normalization(_decode_array(norm["mean"], dim),
                                _decode_array(norm["std"], dim))
    by_name = {b["name"]: b for b in blocks}
    for name, tensor in model.parameters():
        block = by_name.get(name)
        if block is None:
            raise DatasetFormatError(f"checkpoint missing parameter {name!r}")
        arr = _decode_array(block["data"], block["shape"])
        if arr.shape != tensor.array.shape:
            raise DatasetFormatError(
                f"parameter {name!r} has shape {list(arr.shape)}, expected {tensor.shape}"
            )
        tensor.array[...] = arr
    return model, header


def _block_args(by_name: dict, name: str) -> dict:
    block = by_name.get(name)
    if block is None:
        raise DatasetFormatError(f"checkpoint missing parameter {name!r}")
    return {"payload": block["data"], "shape": block["shape"]}
