"""TNSR binary tensor files.

Layout: magic "TNSR", u32 LE version (=1), u32 LE rank, rank x u64 LE
extents, then raw float32 LE data in row-major order. Used for feature
maps, debug dumps of cost volumes, and network weight checkpoints.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError

MAGIC = b"TNSR"
VERSION = 1


def write_tnsr(path, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.astype("<f4").tobytes())


def read_tnsr(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, rank = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise InvalidInputError(f"{path}: unsupported TNSR version {version}")
        shape = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(f.read(count * 4), dtype="<f4")
        if data.size != count:
            raise InvalidInputError(f"{path}: truncated TNSR payload")
    return data.reshape(shape).astype(np.float32)
