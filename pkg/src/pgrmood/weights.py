"""Shared weights-file format for score networks and encoders.

A JSON document with sorted keys, so identical parameters serialize to
identical bytes::

    {"arch": {...}, "format_version": 1, "kind": "score_net",
     "sde": {"beta_max": ..., "beta_min": ..., "num_steps": ...} | null,
     "tensors": {"<name>": {"data": [row-major floats], "shape": [ints]}}}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class WeightsFormatError(ValueError):
    pass


def dumps_weights(kind: str, tensors: dict, arch: dict, sde: dict | None = None) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "arch": arch,
        "sde": sde,
        "tensors": {
            name: {"shape": list(np.shape(t)), "data": np.asarray(t, dtype=np.float64).ravel().tolist()}
            for name, t in tensors.items()
        },
    }
    return json.dumps(doc, sort_keys=True)


def loads_weights(text: str, kind: str | None = None):
    """Parse a weights document; returns ``(tensors, arch, sde)``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WeightsFormatError(f"not a weights document: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise WeightsFormatError(f"unsupported format_version {doc.get('format_version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise WeightsFormatError(f"expected a {kind!r} weights file, got {doc.get('kind')!r}")
    tensors = {}
    for name, entry in doc["tensors"].items():
        shape = tuple(entry["shape"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise WeightsFormatError(f"tensor {name!r}: {data.size} values for shape {shape}")
        tensors[name] = data.reshape(shape)
    return tensors, doc["arch"], doc["sde"]


def save_weights(path, kind, tensors, arch, sde=None) -> None:
    Path(path).write_text(dumps_weights(kind, tensors, arch, sde), encoding="utf-8")


def load_weights(path, kind=None):
    return loads_weights(Path(path).read_text(encoding="utf-8"), kind)
