"""Binary checkpoints: a JSON header followed by raw little-endian float64 tensors.

Layout::

    b"TIDELAB\\x00"  magic (8 bytes)
    uint32          format version
    uint64          header length in bytes
    header          UTF-8 JSON: {"config": {...}, "tensors": [[name, shape], ...], "meta": {...}}
    payload         tensors in header order, C order, '<f8'
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, TiDEModel, init_params

MAGIC = b"TIDELAB\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def dumps(model: TiDEModel, meta: dict | None = None) -> bytes:
    named = model.named_parameters()
    header = {
        "config": model.config.to_dict(),
        "tensors": [[name, list(t.data.shape)] for name, t in named.items()],
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [_PREFIX.pack(MAGIC, VERSION, len(hb)), hb]
    parts += [np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in named.values()]
    return b"".join(parts)


def loads(blob: bytes) -> tuple[TiDEModel, dict]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("not a tidelab checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start : start + hlen].decode())
        cfg = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    params = init_params(cfg, 0)
    named = params.named_parameters()
    stored = [name for name, _ in header["tensors"]]
    if stored != list(named):
        raise CheckpointError("checkpoint tensors do not match the model layout")
    off = start + hlen
    for name, shape in header["tensors"]:
        t = named[name]
        if tuple(shape) != t.data.shape:
            raise CheckpointError(f"{name}: stored shape {tuple(shape)}, expected {t.data.shape}")
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if off + n > len(blob):
            raise CheckpointError("truncated checkpoint payload")
        t.data[...] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=off).reshape(shape)
        off += n
    if off != len(blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return TiDEModel(cfg, params), header.get("meta", {})


def save(model: TiDEModel, path, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(model, meta))


def load(path) -> tuple[TiDEModel, dict]:
    return loads(Path(path).read_bytes())
