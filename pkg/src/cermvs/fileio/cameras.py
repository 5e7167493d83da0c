"""Text-file camera parameters, neighbor lists, and sparse minimum depths.

Camera files use the common MVS layout: an ``extrinsic`` block with the 4x4
row-major [R|t; 0 0 0 1] world-to-camera matrix, an ``intrinsic`` 3x3 block,
then a trailing line ``d_min d_interval`` (only d_min is consumed, as the
fallback reference for sparse-minimum scene scaling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError
from ..geometry import CameraModel


@dataclass
class CameraFile:
    k: np.ndarray
    r: np.ndarray
    t: np.ndarray
    d_min: float
    d_interval: float

    def to_model(self, width: int, height: int) -> CameraModel:
        return CameraModel(k=self.k, r=self.r, t=self.t, width=width, height=height)


def write_camera(path, cam: CameraModel, d_min: float = 0.0, d_interval: float = 0.0) -> None:
    ext = np.eye(4)
    ext[:3, :3] = cam.r
    ext[:3, 3] = cam.t
    lines = ["extrinsic"]
    lines += [" ".join(f"{v:.12g}" for v in row) for row in ext]
    lines += ["", "intrinsic"]
    lines += [" ".join(f"{v:.12g}" for v in row) for row in cam.k]
    lines += ["", f"{d_min:.12g} {d_interval:.12g}", ""]
    with open(path, "w") as f:
        f.write("\n".join(lines))


def read_camera(path) -> CameraFile:
    with open(path) as f:
        tokens = f.read().split()
    try:
        i = tokens.index("extrinsic")
        ext = np.array([float(v) for v in tokens[i + 1 : i + 17]]).reshape(4, 4)
        j = tokens.index("intrinsic")
        k = np.array([float(v) for v in tokens[j + 1 : j + 10]]).reshape(3, 3)
        rest = [float(v) for v in tokens[j + 10 : j + 12]]
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"{path}: malformed camera file ({exc})") from exc
    d_min = rest[0] if rest else 0.0
    d_interval = rest[1] if len(rest) > 1 else 0.0
    return CameraFile(k=k, r=ext[:3, :3], t=ext[:3, 3], d_min=d_min, d_interval=d_interval)


def write_neighbor_lists(path, neighbors: dict) -> None:
    with open(path, "w") as f:
        for view_id in sorted(neighbors):
            ids = " ".join(str(i) for i in neighbors[view_id])
            f.write(f"{view_id}: {ids}\n")


def read_neighbor_lists(path) -> dict:
    """Parse lines of the form ``view_id: id1 id2 ...``."""
    neighbors = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise InvalidInputError(f"{path}:{lineno}: expected 'view: id...'")
            head, _, tail = line.partition(":")
            neighbors[int(head)] = [int(v) for v in tail.split()]
    return neighbors


def write_min_depths(path, depths: dict) -> None:
    with open(path, "w") as f:
        for view_id in sorted(depths):
            f.write(f"{view_id} {depths[view_id]:.12g}\n")


def read_min_depths(path) -> dict:
    depths = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            depths[int(parts[0])] = float(parts[1])
    return depths
