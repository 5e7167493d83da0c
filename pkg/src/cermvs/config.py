"""Pipeline configuration: defaults, flat key=value files, and precedence.

Precedence is defaults < config file < explicit overrides (CLI flags or
request fields). Network hyperparameters that must match a trained
checkpoint (iteration counts, disparity increments, feature dims) are read
from the weight manifest at inference time; the copies here drive the
memory-estimate bench and serve as documentation of the full-scale setup.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import InvalidInputError
from .geometry import SCALE_MODES

STITCH_RESOLUTIONS = ("native", "half")


@dataclass
class PipelineConfig:
    # disparity sampling
    d_max: float = 0.0025  # inverse mm
    coarse_bins: int = 64  # stage-1 increment = d_max / coarse_bins
    fine_divisor: int = 320  # stage-2 increment = d_max / fine_divisor
    pyramid_levels: int = 3
    lookup_radius: int = 11
    stage1_iters: int = 8
    stage2_iters: int = 8
    # multiresolution fusion
    fusion_threshold: float = 0.02
    # stitching
    pass_percent: float = 25.0
    pixel_threshold: float = 1.0
    depth_threshold: float = 0.01
    min_consistent: int = 2
    stitch_resolution: str = "native"
    # view selection
    views_native: int = 10
    views_2x: int = 10
    # scene scaling
    scale_mode: str = "sparse-min-400"
    # bench reference resolution (full-scale native input)
    native_width: int = 1600
    native_height: int = 1200
    # execution
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d_max <= 0:
            raise InvalidInputError("d_max must be positive")
        for name in ("coarse_bins", "fine_divisor", "pyramid_levels", "lookup_radius",
                     "stage1_iters", "stage2_iters", "views_native", "views_2x",
                     "min_consistent", "threads", "native_width", "native_height"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be at least 1")
        if self.stitch_resolution not in STITCH_RESOLUTIONS:
            raise InvalidInputError(
                f"stitch_resolution must be one of {STITCH_RESOLUTIONS}"
            )
        if self.scale_mode not in SCALE_MODES:
            raise InvalidInputError(f"scale_mode must be one of {SCALE_MODES}")
        if not 0 < self.pass_percent < 100:
            raise InvalidInputError("pass_percent must be in (0, 100)")

    @property
    def coarse_increment(self) -> float:
        return self.d_max / self.coarse_bins

    @property
    def fine_increment(self) -> float:
        return self.d_max / self.fine_divisor


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"config line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FIELD_TYPES:
            raise InvalidInputError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CASTS[_FIELD_TYPES[key]](value)
        except ValueError as exc:
            raise InvalidInputError(f"config line {lineno}: {exc}") from exc
    return values


def load_config(path=None, overrides: dict = None) -> PipelineConfig:
    """Build a config from defaults, an optional file, and overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InvalidInputError(f"no config file at {path}")
        values.update(parse_config_text(path.read_text()))
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in _FIELD_TYPES:
                raise InvalidInputError(f"unknown config override {key!r}")
            values[key] = value
    return PipelineConfig(**values)
