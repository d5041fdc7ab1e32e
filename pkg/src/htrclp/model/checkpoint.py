"""Binary checkpoint format, version 1.  All integers little-endian.

    magic      8 bytes   b"HTRCKPT\\0"
    version    uint32    1
    meta_len   uint32    length of the JSON block
    meta       utf-8     compact JSON, sorted keys: config, charset, step, seed, meta
    n_tensors  uint32
    n_tensors times, in sorted name order:
        name_len uint16, name utf-8, ndim uint8, dims uint32 * ndim,
        data float32 little-endian, C order
    crc32      uint32    zlib.crc32 of every preceding byte
"""
from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .network import ModelState, param_shapes

MAGIC = b"HTRCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, corrupted or incompatible checkpoint."""


def _config_dict(config: ModelConfig) -> dict:
    d = dataclasses.asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def to_bytes(state: ModelState) -> bytes:
    head = {"config": _config_dict(state.config), "charset": list(state.charset),
            "step": int(state.step), "seed": int(state.seed), "meta": state.meta}
    meta = json.dumps(head, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(state.params))]
    for name in sorted(state.params):
        arr = np.ascontiguousarray(state.params[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _parse(body: bytes):
    """Walk the structure of ``body``; raises CheckpointError if it runs short."""
    pos = len(MAGIC) + 4
    try:
        meta_len, = struct.unpack_from("<I", body, pos)
        pos += 4
        if pos + meta_len > len(body):
            raise CheckpointError("checkpoint truncated")
        meta = body[pos:pos + meta_len]
        pos += meta_len
        n, = struct.unpack_from("<I", body, pos)
        pos += 4
        tensors = []
        for _ in range(n):
            ln, = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + ln]
            pos += ln
            ndim, = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            count = int(np.prod(dims)) if dims else 1
            if pos + 4 * count > len(body):
                raise CheckpointError("checkpoint truncated")
            tensors.append((name, dims, pos, count))
            pos += 4 * count
    except struct.error:
        raise CheckpointError("checkpoint truncated") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return meta, tensors


def from_bytes(blob: bytes) -> ModelState:
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError("checkpoint truncated")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, = struct.unpack_from("<I", blob, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (reader is v{VERSION})")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        _parse(body)  # a short file reports truncation rather than a checksum failure
        raise CheckpointError("checkpoint checksum mismatch")
    meta, tensors = _parse(body)
    head = json.loads(meta.decode("utf-8"))
    params = {name.decode("utf-8"): np.frombuffer(body, dtype="<f4", count=count, offset=pos)
              .reshape(dims).astype(np.float32) for name, dims, pos, count in tensors}
    config = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in head["config"].items()})
    expected = param_shapes(config)
    if set(expected) != set(params) or any(params[k].shape != tuple(s) for k, s in expected.items()):
        raise CheckpointError("tensor table does not match the stored config")
    params = {k: params[k] for k in expected}
    return ModelState(config, params, tuple(head["charset"]), head["step"], head["seed"], head["meta"])


def save(state: ModelState, path) -> None:
    Path(path).write_bytes(to_bytes(state))


def load(path) -> ModelState:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return from_bytes(blob)
