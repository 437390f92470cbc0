"""Raw tensor file format MVT1.

Layout: magic ``MVT1``, u8 rank, rank x u32 little-endian extents, then the
float32 little-endian payload in row-major order. Used for feature dumps,
flow inputs and oracle fixtures.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MVT1"


class MvtFormatError(ValueError):
    """Malformed MVT1 file (bad magic, truncation, size mismatch)."""


def write_mvt(path, arr: np.ndarray) -> None:
    a = np.ascontiguousarray(arr, dtype=np.float32)
    if a.ndim > 255:
        raise MvtFormatError(f"rank {a.ndim} exceeds the u8 rank field")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.astype("<f4").tobytes())


def read_mvt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise MvtFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 5:
        raise MvtFormatError(f"{path}: truncated header")
    rank = raw[4]
    off = 5
    if len(raw) < off + 4 * rank:
        raise MvtFormatError(f"{path}: truncated extent list")
    shape = struct.unpack(f"<{rank}I", raw[off : off + 4 * rank])
    off += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(raw) != off + 4 * count:
        raise MvtFormatError(
            f"{path}: payload holds {(len(raw) - off) // 4} values, extents require {count}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=off, count=count)
    return data.reshape(shape).astype(np.float32)
