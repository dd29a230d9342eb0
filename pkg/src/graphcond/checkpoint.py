"""JSON checkpoints of named tensors.

Floats are written with ``repr`` round-trip precision, so a saved and
reloaded model predicts bit-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .layers import GcnParams, MlpParams
from .model import ConditionedModel, MixingSchedule

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(a: np.ndarray) -> dict:
    a = np.asarray(a)
    return {"dtype": a.dtype.name, "shape": list(a.shape), "data": a.ravel().tolist()}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=d["dtype"]).reshape(d["shape"])


def _read(path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not a JSON checkpoint ({e})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {doc.get('kind')!r}")
    return doc


def save_first_layer(weights, path, meta: dict | None = None) -> None:
    doc = {"format_version": FORMAT_VERSION, "kind": "first_layer", "meta": meta or {},
           "tensors": {"first_layer": _pack(weights)}}
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_first_layer(path) -> tuple[np.ndarray, dict]:
    doc = _read(path, "first_layer")
    return _unpack(doc["tensors"]["first_layer"]), doc["meta"]


def save_model(model: ConditionedModel, path, include_gnn: bool = False) -> None:
    """Write the MLP, ``W_scratch`` and the frozen first layer (plus the GCN if asked)."""
    mlp = model.mlp
    tensors = {k: _pack(v.data) for k, v in mlp.tensors.items()}
    tensors["w_scratch"] = _pack(model.w_scratch.data)
    if model.frozen_first_layer is not None:
        tensors["frozen_first_layer"] = _pack(model.frozen_first_layer)
    if include_gnn and model.gnn is not None:
        tensors.update({k: _pack(v.data) for k, v in model.gnn.tensors.items()})
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "model",
        "meta": {
            "widths": list(mlp.widths), "dropout": mlp.dropout_p, "leaky_slope": mlp.leaky_slope,
            "bn_momentum": mlp.bn_momentum, "bn_eps": mlp.bn_eps,
            "gcn_dropout": model.gnn.dropout_p if model.gnn is not None else None,
            "schedule": vars(model.schedule),
        },
        "tensors": tensors,
        "buffers": {k: _pack(v) for k, v in mlp.buffers.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_model(path) -> ConditionedModel:
    doc = _read(path, "model")
    meta, raw = doc["meta"], {k: _unpack(v) for k, v in doc["tensors"].items()}
    gcn = {k: Tensor(raw.pop(k), True) for k in list(raw) if k.startswith("gcn")}
    w_scratch = Tensor(raw.pop("w_scratch"), True)
    frozen = raw.pop("frozen_first_layer", None)
    mlp = MlpParams({k: Tensor(v, True) for k, v in raw.items()},
                    {k: _unpack(v) for k, v in doc["buffers"].items()},
                    tuple(meta["widths"]), meta["dropout"], meta["leaky_slope"],
                    meta["bn_momentum"], meta["bn_eps"])
    gnn = GcnParams(gcn, meta["gcn_dropout"]) if gcn else None
    return ConditionedModel(mlp, w_scratch, gnn, MixingSchedule(**meta["schedule"]), frozen)
