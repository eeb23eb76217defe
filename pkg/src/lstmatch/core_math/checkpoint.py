"""JSON checkpoint: parameter path -> shape + row-major values."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .layers import named_leaves, replace_leaves

FORMAT_TAG = "lstmatch-ckpt-v1"


class CheckpointError(ValueError):
    pass


def params_to_doc(params, meta: dict[str, Any] | None = None) -> dict[str, Any]:
    return {
        "format": FORMAT_TAG,
        "meta": meta or {},
        "params": {
            path: {"shape": list(np.shape(arr)), "values": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for path, arr in named_leaves(params)
        },
    }


def doc_to_values(doc: dict[str, Any]) -> dict[str, np.ndarray]:
    if doc.get("format") != FORMAT_TAG:
        raise CheckpointError(f"unknown checkpoint format {doc.get('format')!r}")
    out = {}
    for path, entry in doc["params"].items():
        arr = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape)):
            raise CheckpointError(f"{path}: {arr.size} values for shape {shape}")
        out[path] = arr.reshape(shape)
    return out


def save_checkpoint(path: str | Path, params, meta: dict[str, Any] | None = None) -> None:
    doc = params_to_doc(params, meta)
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    return json.loads(Path(path).read_text())


def load_into(template, doc: dict[str, Any]):
    """Fill a parameter tree shaped like ``template`` from a checkpoint document."""
    values = doc_to_values(doc)
    expected = dict(named_leaves(template))
    missing = set(expected) - set(values)
    if missing:
        raise CheckpointError(f"checkpoint lacks {sorted(missing)[:5]}")
    for k, arr in expected.items():
        if tuple(values[k].shape) != tuple(np.shape(arr)):
            raise CheckpointError(f"{k}: shape {values[k].shape} != {np.shape(arr)}")
    return replace_leaves(template, values)
