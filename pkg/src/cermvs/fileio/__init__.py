"""File formats consumed and produced by the pipeline."""

from .cameras import (
    CameraFile,
    read_camera,
    read_min_depths,
    read_neighbor_lists,
    write_camera,
    write_min_depths,
    write_neighbor_lists,
)
from .pfm import read_pfm, write_pfm
from .ply import read_ply, write_ply
from .ppm import read_ppm, write_ppm
from .tnsr import read_tnsr, write_tnsr

__all__ = [
    "CameraFile",
    "read_camera",
    "read_min_depths",
    "read_neighbor_lists",
    "read_pfm",
    "read_ply",
    "read_ppm",
    "read_tnsr",
    "write_camera",
    "write_min_depths",
    "write_neighbor_lists",
    "write_pfm",
    "write_ply",
    "write_ppm",
    "write_tnsr",
]
