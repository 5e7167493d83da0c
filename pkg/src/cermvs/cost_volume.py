"""Epipolar correlation volumes, pyramid pooling, cascading, and lookup.

A stack holds, per neighbor view, the correlation of every reference feature
pixel with neighbor features sampled along its epipolar line at uniformly
spaced inverse depths. The stack is pooled into a pyramid along the disparity
axis; it is never updated afterwards, only read back through `lookup`. Stage 2
of the cascade rebuilds the stack with finer increments centred per pixel on
the current disparity estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import CameraModel, epipolar_basis, normalize_epipolar
from .tensor_core import avg_pool_last_axis, bilinear_sample_2d


@dataclass
class CostVolumeStack:
    """Pyramid of per-neighbor correlation volumes over disparity samples.

    levels[l] has shape (N, Hf, Wf, D / 2**l). ``centers`` is None for a
    stage-1 stack (samples start at disparity 0) and holds the per-pixel
    window centre for a stage-2 stack. ``lookup_radius`` is the half-window
    R used when reading the stack back.
    """

    levels: list
    base_increment: float
    lookup_radius: int
    centers: Optional[np.ndarray] = None

    @property
    def neighbor_count(self) -> int:
        return self.levels[0].shape[0]

    @property
    def grid(self):
        return self.levels[0].shape[1:3]

    @property
    def num_bins(self) -> int:
        return self.levels[0].shape[3]


def _feature_grid(shape):
    """(P, 2) array of (x, y) feature coordinates in row-major pixel order."""
    hf, wf = shape
    ys, xs = np.mgrid[0:hf, 0:wf]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def _check_inputs(ref_feat, nbr_feats, cams, levels, radius):
    ref_feat = np.ascontiguousarray(ref_feat, dtype=np.float32)
    if ref_feat.ndim != 3:
        raise InvalidInputError("feature maps must be (Df, Hf, Wf)")
    nbr_feats = [np.ascontiguousarray(f, dtype=np.float32) for f in nbr_feats]
    if not nbr_feats:
        raise InvalidInputError("need at least one neighbor view")
    for f in nbr_feats:
        if f.shape != ref_feat.shape:
            raise InvalidInputError("all feature maps must share one shape")
    if len(cams) != len(nbr_feats) + 1:
        raise InvalidInputError(
            f"got {len(cams)} cameras for {len(nbr_feats)} neighbors; expected N+1"
        )
    if levels < 1:
        raise InvalidInputError("pyramid needs at least one level")
    if radius < 1 or radius % 2 == 0:
        raise InvalidInputError("lookup radius must be odd and positive")
    return ref_feat, nbr_feats


def _correlate(ref_flat, nbr_feat, coords, valid):
    """Per-pixel feature correlation, zeroed where reprojection is invalid."""
    sampled = bilinear_sample_2d(nbr_feat, coords)
    corr = (ref_flat.astype(np.float64) * sampled).sum(axis=0)
    corr /= math.sqrt(ref_flat.shape[0])
    corr[~valid] = 0.0
    return corr


def _pool_pyramid(volume: np.ndarray, levels: int):
    out = [volume]
    for _ in range(levels - 1):
        out.append(avg_pool_last_axis(out[-1]))
    return out


def build_stage1_volume(
    ref_feat,
    nbr_feats,
    cams,
    num_bins: int,
    d_max: float,
    levels: int = 3,
    lookup_radius: int = 11,
    downsize: int = 1,
) -> CostVolumeStack:
    """Coarse correlation stack over the full disparity range [0, d_max).

    Disparity sample j is ``j * d_max / num_bins`` (0 included, d_max
    excluded). Correlations are inner products of reference and sampled
    neighbor features divided by sqrt(Df); invalid reprojections (behind the
    camera) and samples outside the neighbor image contribute 0.
    """
    ref_feat, nbr_feats = _check_inputs(ref_feat, nbr_feats, cams, levels, lookup_radius)
    if num_bins % (1 << (levels - 1)) != 0:
        raise InvalidInputError(
            f"{num_bins} disparity bins cannot be pooled {levels - 1} times"
        )
    if d_max <= 0:
        raise InvalidInputError("d_max must be positive")

    df, hf, wf = ref_feat.shape
    pixels = _feature_grid((hf, wf))
    ref_flat = ref_feat.reshape(df, hf * wf)
    increment = d_max / num_bins
    sigmas = increment * np.arange(num_bins)

    volume = np.empty((len(nbr_feats), hf, wf, num_bins), dtype=np.float32)
    for n, nbr_feat in enumerate(nbr_feats):
        base, delta = epipolar_basis(cams[0], cams[n + 1], pixels, downsize)
        for j, sigma in enumerate(sigmas):
            coords, valid = normalize_epipolar(base, delta, sigma, downsize)
            corr = _correlate(ref_flat, nbr_feat, coords, valid)
            volume[n, :, :, j] = corr.reshape(hf, wf).astype(np.float32)

    return CostVolumeStack(
        levels=_pool_pyramid(volume, levels),
        base_increment=increment,
        lookup_radius=lookup_radius,
    )


def build_stage2_volume(
    ref_feat,
    nbr_feats,
    cams,
    centers,
    fine_increment: float,
    levels: int = 3,
    lookup_radius: int = 11,
    downsize: int = 1,
) -> CostVolumeStack:
    """Fine correlation stack centred per pixel on the current disparity.

    The fine bin count is 2**(levels-1) * lookup_radius so the volume still
    pools ``levels - 1`` times. Sample j at pixel q sits at
    ``centers[q] + (j - bins/2) * fine_increment``; negative candidates are
    clamped to 0 before reprojection.
    """
    ref_feat, nbr_feats = _check_inputs(ref_feat, nbr_feats, cams, levels, lookup_radius)
    if fine_increment <= 0:
        raise InvalidInputError("fine increment must be positive")
    df, hf, wf = ref_feat.shape
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (hf, wf):
        raise InvalidInputError(
            f"centers grid {centers.shape} does not match features ({hf}, {wf})"
        )
    if not np.isfinite(centers).all() or (centers < 0).any():
        raise InvalidInputError("centers must be finite and non-negative")

    num_bins = (1 << (levels - 1)) * lookup_radius
    pixels = _feature_grid((hf, wf))
    ref_flat = ref_feat.reshape(df, hf * wf)
    centers_flat = centers.ravel()

    volume = np.empty((len(nbr_feats), hf, wf, num_bins), dtype=np.float32)
    for n, nbr_feat in enumerate(nbr_feats):
        base, delta = epipolar_basis(cams[0], cams[n + 1], pixels, downsize)
        for j in range(num_bins):
            sigma = centers_flat + (j - num_bins / 2) * fine_increment
            np.clip(sigma, 0.0, None, out=sigma)
            coords, valid = normalize_epipolar(base, delta, sigma, downsize)
            corr = _correlate(ref_flat, nbr_feat, coords, valid)
            volume[n, :, :, j] = corr.reshape(hf, wf).astype(np.float32)

    return CostVolumeStack(
        levels=_pool_pyramid(volume, levels),
        base_increment=fine_increment,
        lookup_radius=lookup_radius,
        centers=centers.copy(),
    )


def lookup(stack: CostVolumeStack, disparity) -> np.ndarray:
    """Read an R-wide window around the disparity from every pyramid level.

    Args:
        stack: Stage-1 or stage-2 stack.
        disparity: (Hf, Wf) disparity field on the stack's grid.

    Returns:
        (N, R*L, Hf, Wf) float32 array; for each level the R window values
        (1-D linearly interpolated along the disparity axis, zero outside the
        volume) are concatenated level-major.
    """
    d = np.asarray(disparity, dtype=np.float64)
    if d.shape != stack.grid:
        raise InvalidInputError(
            f"disparity grid {d.shape} does not match stack grid {stack.grid}"
        )
    radius = stack.lookup_radius
    offsets = np.arange(radius) - (radius - 1) // 2
    n = stack.neighbor_count
    out = np.empty((n, radius * len(stack.levels)) + stack.grid, dtype=np.float32)

    for l, level in enumerate(stack.levels):
        bins = level.shape[3]
        inc = stack.base_increment * (1 << l)
        if stack.centers is None:
            pos = d / inc
        else:
            # The stage-2 volume is symmetric about its middle bin, which
            # holds the per-pixel window centre.
            pos = (d - stack.centers) / inc + stack.num_bins / (2 << l)
        for oi, off in enumerate(offsets):
            q = pos + off
            inrange = (q >= 0.0) & (q <= bins - 1)
            i0f = np.clip(np.floor(q), 0, bins - 1)
            i0 = i0f.astype(np.intp)
            i1 = np.minimum(i0 + 1, bins - 1)
            w1 = np.where(inrange, q - i0f, 0.0)
            v0 = np.take_along_axis(level, i0[None, :, :, None], axis=3)[..., 0]
            v1 = np.take_along_axis(level, i1[None, :, :, None], axis=3)[..., 0]
            vals = v0 * (1.0 - w1) + v1 * w1
            vals *= inrange
            out[:, l * radius + oi] = vals.astype(np.float32)
    return out


def fuse_views(per_neighbor) -> np.ndarray:
    """Element-wise mean of per-neighbor lookup features over the view axis."""
    arr = np.asarray(per_neighbor, dtype=np.float32)
    if arr.ndim < 1 or arr.shape[0] == 0:
        raise InvalidInputError("need at least one neighbor to fuse")
    return (arr.sum(axis=0, dtype=np.float64) / arr.shape[0]).astype(np.float32)


@dataclass(frozen=True)
class MemoryEstimate:
    cascaded_elems: int
    non_cascaded_elems: int

    @property
    def ratio(self) -> float:
        return self.cascaded_elems / self.non_cascaded_elems

    @property
    def cascaded_bytes(self) -> int:
        return 4 * self.cascaded_elems

    @property
    def non_cascaded_bytes(self) -> int:
        return 4 * self.non_cascaded_elems


def _stack_elems(bins: int, levels: int, hf: int, wf: int, n: int) -> int:
    total = 0
    for l in range(levels):
        if bins % (1 << l):
            raise InvalidInputError(f"{bins} bins not divisible by 2^{l} for pooling")
        total += (bins >> l) * n * hf * wf
    return total


def memory_estimate(
    num_bins: int,
    num_fine_bins: int,
    levels: int,
    hf: int,
    wf: int,
    n: int,
    d_max: float,
    fine_increment: float,
) -> MemoryEstimate:
    """Element counts of the cascaded stacks vs one full-range fine stack.

    The non-cascaded baseline covers [0, d_max) at the fine increment, i.e.
    round(d_max / fine_increment) bins, with the same pyramid depth.
    """
    if min(num_bins, num_fine_bins, levels, hf, wf, n) < 1:
        raise InvalidInputError("all sizes must be positive")
    if d_max <= 0 or fine_increment <= 0:
        raise InvalidInputError("d_max and fine_increment must be positive")
    full_bins = round(d_max / fine_increment)
    cascaded = _stack_elems(num_bins, levels, hf, wf, n) + _stack_elems(
        num_fine_bins, levels, hf, wf, n
    )
    non_cascaded = _stack_elems(full_bins, levels, hf, wf, n)
    return MemoryEstimate(cascaded_elems=cascaded, non_cascaded_elems=non_cascaded)
