"""Weights container: a text manifest plus one little-endian float64 blob.

Manifest layout::

    bigrasp-weights 1
    blob <file name of the blob, relative to the manifest>
    config <ModelConfig as compact JSON>
    <name> <shape, e.g. 16x32> <byte offset>
    ...
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import WeightsMismatch
from .model import ModelConfig, check_weights
from .tensor import parameter

MAGIC = "bigrasp-weights 1"


def blob_path(manifest) -> Path:
    manifest = Path(manifest)
    return manifest.with_name(manifest.name + ".bin")


def save_weights(path, weights: dict, cfg: ModelConfig | None = None):
    path = Path(path)
    blob = blob_path(path)
    lines = [MAGIC, f"blob {blob.name}", "config " + json.dumps(cfg.to_dict() if cfg else None, sort_keys=True)]
    chunks, offset = [], 0
    for name, t in weights.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        shape = "x".join(str(s) for s in arr.shape) or "scalar"
        lines.append(f"{name} {shape} {offset}")
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    path.write_text("\n".join(lines) + "\n")
    blob.write_bytes(b"".join(chunks))


def load_weights(path, cfg: ModelConfig | None = None) -> tuple[dict, ModelConfig | None]:
    """Read a manifest and its blob; validates length, offsets and (if known) the config."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise WeightsMismatch(f"cannot read weights manifest {path}: {exc}") from exc
    if len(lines) < 3 or lines[0] != MAGIC or not lines[1].startswith("blob ") or not lines[2].startswith("config "):
        raise WeightsMismatch(f"{path}: not a weights manifest")
    blob = path.with_name(lines[1][5:].strip())
    try:
        raw = blob.read_bytes()
    except OSError as exc:
        raise WeightsMismatch(f"cannot read weights blob {blob}: {exc}") from exc
    stored = json.loads(lines[2][7:])
    stored_cfg = ModelConfig.from_dict(stored) if stored else None
    weights, expected_offset = {}, 0
    for line in lines[3:]:
        if not line.strip():
            continue
        try:
            name, shape_s, off_s = line.split()
            shape = () if shape_s == "scalar" else tuple(int(s) for s in shape_s.split("x"))
            offset = int(off_s)
        except ValueError as exc:
            raise WeightsMismatch(f"{path}: malformed entry {line!r}") from exc
        if offset != expected_offset:
            raise WeightsMismatch(f"{path}: {name} at offset {offset}, expected {expected_offset}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise WeightsMismatch(f"{path}: blob too short for {name}")
        weights[name] = parameter(np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape))
        expected_offset += nbytes
    if expected_offset != len(raw):
        raise WeightsMismatch(f"{path}: blob has {len(raw)} bytes, manifest describes {expected_offset}")
    target = cfg or stored_cfg
    if target is not None:
        check_weights(weights, target)
    return weights, stored_cfg
