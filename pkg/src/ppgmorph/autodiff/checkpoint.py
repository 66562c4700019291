"""Checkpoint files: versioned header, JSON config block, named f32 tensors.

Layout (little-endian)::

    b"PPGC" | u16 version | u32 config_len | config (UTF-8 JSON)
    u32 n_tensors
    repeated: u16 name_len | name | u8 ndim | u32 dims[ndim] | f32 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PPGC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, config: dict) -> None:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        bname = name.encode("utf-8")
        parts.append(struct.pack("<H", len(bname)))
        parts.append(bname)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path):
    """Return ``(tensors, config)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    try:
        version, cfg_len = struct.unpack_from("<HI", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"unknown checkpoint version {version}")
        pos = 10
        config = json.loads(raw[pos:pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, pos)
            pos += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if pos + 4 * n > len(raw):
                raise CheckpointError("truncated checkpoint")
            tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=pos).reshape(shape).copy()
            pos += 4 * n
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    return tensors, config
