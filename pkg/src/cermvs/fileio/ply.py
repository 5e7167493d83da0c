"""Binary little-endian PLY point clouds (float xyz + uchar rgb)."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError

_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
"""

_VERTEX_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)


def write_ply(path, points, colors) -> None:
    """Write N points (N, 3 float) with colors (N, 3 uint8) to ``path``."""
    points = np.asarray(points, dtype=np.float32).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if points.shape[0] != colors.shape[0]:
        raise InvalidInputError("points and colors must have the same length")
    rec = np.empty(points.shape[0], dtype=_VERTEX_DTYPE)
    rec["x"], rec["y"], rec["z"] = points[:, 0], points[:, 1], points[:, 2]
    rec["red"], rec["green"], rec["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    with open(path, "wb") as f:
        f.write(_HEADER.format(count=points.shape[0]).encode("ascii"))
        f.write(rec.tobytes())


def read_ply(path):
    """Read a binary little-endian PLY written by :func:`write_ply`.

    Returns:
        (points, colors): (N, 3) float32 and (N, 3) uint8 arrays. Extra
        vertex properties are rejected; this reader only supports the
        layout this package emits.
    """
    with open(path, "rb") as f:
        line = f.readline().strip()
        if line != b"ply":
            raise InvalidInputError(f"{path}: missing ply magic")
        count = None
        fmt = None
        props = []
        while True:
            line = f.readline()
            if not line:
                raise InvalidInputError(f"{path}: header never ends")
            line = line.strip()
            if line.startswith(b"comment"):
                continue
            if line.startswith(b"format"):
                fmt = line.split()[1]
            elif line.startswith(b"element vertex"):
                count = int(line.split()[-1])
            elif line.startswith(b"element"):
                raise InvalidInputError(f"{path}: unsupported element {line!r}")
            elif line.startswith(b"property"):
                props.append(line.split()[-1])
            elif line == b"end_header":
                break
        if fmt != b"binary_little_endian":
            raise InvalidInputError(f"{path}: unsupported format {fmt!r}")
        if count is None:
            raise InvalidInputError(f"{path}: no vertex element")
        if props != [b"x", b"y", b"z", b"red", b"green", b"blue"]:
            raise InvalidInputError(f"{path}: unsupported vertex layout {props}")
        rec = np.frombuffer(f.read(count * _VERTEX_DTYPE.itemsize), dtype=_VERTEX_DTYPE)
        if rec.size != count:
            raise InvalidInputError(f"{path}: truncated vertex payload")
    points = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float32)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return points, colors
