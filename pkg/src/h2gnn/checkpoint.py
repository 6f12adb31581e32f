"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"H2GN"                    magic
    u32 version
    u32 metadata length, then UTF-8 JSON {config, val_score, iteration}
    u32 tensor count
    per tensor: u32 name length, name bytes, u32 ndim, u64 * ndim shape,
                float64 data in row-major order
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import CheckpointError

MAGIC = b"H2GN"
VERSION = 1


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    config: dict
    val_score: float = float("nan")
    iteration: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = json.dumps(
        {"config": ckpt.config, "val_score": ckpt.val_score, "iteration": ckpt.iteration, "extra": ckpt.extra},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(ckpt.params)))
        for name in sorted(ckpt.params):
            arr = np.asarray(ckpt.params[name], dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def _read(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; not an H2GN checkpoint")
        (version,) = struct.unpack("<I", _read(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"checkpoint format version {version} is not supported (expected {VERSION})")
        (mlen,) = struct.unpack("<I", _read(fh, 4))
        try:
            meta = json.loads(_read(fh, mlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt metadata: {exc}") from None
        (count,) = struct.unpack("<I", _read(fh, 4))
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(fh, 4))
            name = _read(fh, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read(fh, 4))
            shape = struct.unpack(f"<{ndim}Q", _read(fh, 8 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read(fh, 8 * size), dtype="<f8").astype(np.float64)
            params[name] = data.reshape(shape)
    return Checkpoint(params, meta["config"], meta["val_score"], meta["iteration"], meta.get("extra", {}))
