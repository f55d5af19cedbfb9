"""DMC1 binary container.

Layout (all integers little-endian):
    magic   4 bytes  b"DMC1"
    version u8       = 1
    rank    u32
    dims    rank x u64          (N, C, H, W for image payloads)
    labels  dims[0] x u32
    data    prod(dims) x f32 (IEEE-754 LE)
    mlen    u32
    meta    mlen bytes of UTF-8 JSON

The same container stores condensed sets (rank 4) and flattened
checkpoint parameter vectors (rank 1, labels all zero).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"DMC1"
VERSION = 1


def write_container(
    path: str | Path,
    data: np.ndarray,
    labels: np.ndarray,
    metadata: dict,
) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    labels = np.asarray(labels, dtype="<u4")
    if labels.ndim != 1 or labels.shape[0] != data.shape[0]:
        raise FormatError(
            f"labels length {labels.shape} does not match leading dim {data.shape[0]}"
        )
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", VERSION))
        f.write(struct.pack("<I", data.ndim))
        f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        f.write(labels.tobytes())
        f.write(data.tobytes())
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def read_container(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    """Read a DMC1 file; returns (data, labels, metadata)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic, not a DMC1 file")
        (version,) = struct.unpack("<B", _read_exact(f, 1, "version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
        if rank == 0 or rank > 8:
            raise FormatError(f"{path}: implausible rank {rank}")
        dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "dims"))
        n = dims[0]
        count = int(np.prod(dims, dtype=np.int64))
        labels = np.frombuffer(_read_exact(f, 4 * n, "labels"), dtype="<u4").copy()
        data = np.frombuffer(_read_exact(f, 4 * count, "data"), dtype="<f4")
        data = data.reshape(dims).copy()
        (mlen,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, mlen, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"{path}: bad metadata JSON: {e}") from e
    return data, labels, meta
