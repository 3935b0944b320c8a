"""Versioned binary checkpoint container.

Layout (little-endian)::

    8 bytes   magic  b"DRNCKPT\\0"
    u32       format version
    u64       header length in bytes
    ...       UTF-8 JSON header (sorted keys): model config, seed, schema,
              schema fingerprint and the tensor index
    ...       float64 payload of every indexed tensor, in index order

Nothing time-dependent is written, so identical networks give identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ModelConfig, Network, build_network
from .pipeline import DataError, FeatureSchema

MAGIC = b"DRNCKPT\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, network: Network, schema: Optional[FeatureSchema] = None,
                    extra: Optional[dict] = None) -> None:
    tensors = []
    payload = []
    for name, p in network.parameters().items():
        tensors.append({"name": name, "kind": "param", "shape": list(p.shape)})
        payload.append(p.data)
    for name, b in network.buffers().items():
        tensors.append({"name": name, "kind": "buffer", "shape": list(b.shape)})
        payload.append(b)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": network.config.to_dict(),
        "seed": network.config.seed,
        "schema": schema.to_dict() if schema is not None else None,
        "schema_fingerprint": schema.fingerprint if schema is not None else None,
        "tensors": tensors,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in payload:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_header(path) -> dict:
    return _read(path)[0]


def _read(path) -> tuple[dict, bytes, int]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    return header, raw, start + hlen


def load_checkpoint(path) -> tuple[Network, Optional[FeatureSchema], dict]:
    """Rebuild the network and restore every parameter and running statistic."""
    header, raw, off = _read(path)
    try:
        network = build_network(ModelConfig.from_dict(header["model_config"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config ({exc})") from None
    params = network.parameters()
    buffers = network.buffers()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if off + 8 * count > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        target = params.get(entry["name"]) if entry["kind"] == "param" else buffers.get(entry["name"])
        if target is None:
            raise CheckpointError(f"{path}: unknown tensor {entry['name']}")
        dest = target.data if entry["kind"] == "param" else target
        if dest.shape != shape:
            raise CheckpointError(f"{path}: shape mismatch for {entry['name']}")
        dest[...] = arr
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after payload")
    try:
        schema = FeatureSchema.from_dict(header["schema"]) if header.get("schema") else None
    except (DataError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad embedded schema ({exc})") from None
    if schema is not None and schema.fingerprint != header.get("schema_fingerprint"):
        raise CheckpointError(f"{path}: schema fingerprint mismatch")
    return network, schema, header
