"""Multiresolution fusion of disparity maps (half-resolution vs full).

The high-resolution prediction wins at a pixel when its depth agrees with
the upsampled low-resolution depth within a relative threshold; otherwise
the low-resolution value is kept. There is no blending: every output pixel
is exactly one of the two candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class FusionConfig:
    threshold: float = 0.02  # relative depth-agreement threshold
    epsilon: float = 1e-9  # disparities at or below this count as invalid

    def __post_init__(self):
        if self.threshold < 0:
            raise InvalidInputError("fusion threshold must be non-negative")


def bilinear_resize(src, out_shape) -> np.ndarray:
    """Resize a 2-D map with half-pixel-centre alignment and edge clamping."""
    src = np.asarray(src, dtype=np.float32)
    if src.ndim != 2:
        raise InvalidInputError("resize expects a 2-D map")
    h, w = src.shape
    oh, ow = out_shape
    ys = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = src[np.ix_(y0, x0)] * (1.0 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1.0 - wx) + src[np.ix_(y1, x1)] * wx
    return (top * (1.0 - wy) + bot * wy).astype(np.float32)


def fuse_multires(d_lr, d_hr, cfg: FusionConfig) -> np.ndarray:
    """Select per pixel between the upsampled LR and the HR disparity.

    Args:
        d_lr: (h, w) low-resolution disparity field.
        d_hr: (2h, 2w) high-resolution disparity field.
        cfg: Threshold and validity floor.

    Returns:
        (2h, 2w) float32 fused disparity. Where either input is invalid
        (<= epsilon) the LR value is kept; where both are invalid the pixel
        is marked invalid (0).
    """
    d_lr = np.asarray(d_lr, dtype=np.float32)
    d_hr = np.asarray(d_hr, dtype=np.float32)
    if d_lr.ndim != 2 or d_hr.ndim != 2:
        raise InvalidInputError("disparity maps must be 2-D")
    if d_hr.shape != (2 * d_lr.shape[0], 2 * d_lr.shape[1]):
        raise InvalidInputError(
            f"HR grid {d_hr.shape} is not exactly twice the LR grid {d_lr.shape}"
        )
    up = bilinear_resize(d_lr, d_hr.shape)

    lr_ok = up > cfg.epsilon
    hr_ok = d_hr > cfg.epsilon
    both = lr_ok & hr_ok
    with np.errstate(divide="ignore"):
        depth_lr = np.where(lr_ok, 1.0 / np.where(lr_ok, up, 1.0), 0.0)
        depth_hr = np.where(hr_ok, 1.0 / np.where(hr_ok, d_hr, 1.0), 0.0)
    agree = both & (np.abs(depth_lr - depth_hr) < cfg.threshold * depth_lr)

    out = np.where(agree, d_hr, up)
    out[~(lr_ok | hr_ok)] = 0.0
    return out.astype(np.float32)


def disparity_to_depth_map(disparity, epsilon: float = 1e-9) -> np.ndarray:
    """Invert a disparity map; invalid pixels (<= epsilon) map to depth 0."""
    d = np.asarray(disparity, dtype=np.float64)
    ok = d > epsilon
    out = np.zeros_like(d)
    out[ok] = 1.0 / d[ok]
    return out.astype(np.float32)
