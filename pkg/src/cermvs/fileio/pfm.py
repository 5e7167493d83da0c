"""PFM depth/disparity maps ("Pf" grayscale, little-endian, bottom-up rows)."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError


def write_pfm(path, data) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise InvalidInputError(f"PFM writer expects a 2-D map, got {data.ndim} axes")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(data[::-1].astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise InvalidInputError(f"{path}: not a grayscale PFM (header {header!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype)
        if data.size != w * h:
            raise InvalidInputError(f"{path}: truncated PFM payload")
    return data.reshape(h, w)[::-1].astype(np.float32)
