"""Point-cloud stitching with scene-adaptive consistency thresholds.

Each reference-view depth map is checked against its neighbors by
unproject/reproject round trips. A pixel survives when at least ``n_min``
neighbors agree within ``k * t1`` pixels of reprojection error and
``k * t2`` relative depth error; the scale ``k`` is solved per scene so a
fixed percentage of pixels passes. Surviving pixels are fused (mean of the
reference and consistent round-trip depths), unprojected to world
coordinates, and colored from the reference image.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .geometry import MIN_HOMOGENEOUS_Z, CameraModel
from .tensor_core import bilinear_sample_2d

logger = logging.getLogger(__name__)

K_MAX = 1e6
_BISECT_REL = 1e-3


@dataclass
class ConsistencyConfig:
    pixel_threshold: float = 1.0  # t1, px, scaled by k
    depth_threshold: float = 0.01  # t2, relative, scaled by k
    min_consistent: int = 2  # neighbors that must agree
    pass_percent: float = 25.0  # target fraction of pixels kept

    def __post_init__(self):
        if self.pixel_threshold <= 0 or self.depth_threshold <= 0:
            raise InvalidInputError("consistency thresholds must be positive")
        if not 0 < self.pass_percent < 100:
            raise InvalidInputError("pass percentage must be in (0, 100)")
        if self.min_consistent < 1:
            raise InvalidInputError("need at least one consistent neighbor")


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float32, mm
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise InvalidInputError("point coordinates must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3), np.float32), np.zeros((0, 3), np.uint8))


@dataclass
class View:
    """One reference view at stitch resolution.

    ``scale_factor`` is the scene rescale the depth map was predicted under;
    stitching divides it back out so all views land in the original frame.
    """

    view_id: int
    cam: CameraModel
    depth: np.ndarray  # (H, W) mm
    image: Optional[np.ndarray] = None  # (H, W, 3) uint8
    neighbors: list = field(default_factory=list)  # view ids
    scale_factor: float = 1.0


def reprojection_errors_grid(ref_cam, ref_depth, nbr_cam, nbr_depth):
    """Round-trip consistency errors for every pixel of a reference view.

    Returns (e_p, e_d, roundtrip_depth) maps; pixels with no valid reference
    depth, reprojections landing outside the neighbor image, or invalid
    neighbor depths carry infinite errors.
    """
    ref_depth = np.asarray(ref_depth, dtype=np.float64)
    nbr_depth = np.asarray(nbr_depth, dtype=np.float32)
    h, w = ref_depth.shape
    ys, xs = np.mgrid[0:h, 0:w]
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    z = ref_depth.ravel()
    ok = z > 0

    world = ref_cam.unproject(pixels, np.where(ok, z, 1.0))
    nbr_pix, nbr_z = nbr_cam.project(world)
    nh, nw = nbr_depth.shape
    inside = (
        (nbr_pix[:, 0] >= 0)
        & (nbr_pix[:, 0] <= nw - 1)
        & (nbr_pix[:, 1] >= 0)
        & (nbr_pix[:, 1] <= nh - 1)
        & (nbr_z > MIN_HOMOGENEOUS_Z)
    )
    sample_at = np.where(inside[:, None], nbr_pix, 0.0)
    sampled = bilinear_sample_2d(nbr_depth[None], sample_at)[0].astype(np.float64)
    ok = ok & inside & (sampled > 0)

    back = nbr_cam.unproject(nbr_pix, np.where(ok, sampled, 1.0))
    ref_pix, ref_z = ref_cam.project(back)
    e_p = np.linalg.norm(pixels - ref_pix, axis=1)
    e_d = np.abs(ref_z - z) / np.where(z > 0, z, 1.0)

    e_p = np.where(ok, e_p, np.inf).reshape(h, w)
    e_d = np.where(ok, e_d, np.inf).reshape(h, w)
    rt_depth = np.where(ok, ref_z, np.inf).reshape(h, w)
    return e_p, e_d, rt_depth


def reprojection_errors(ref_cam, ref_depth, nbr_cam, nbr_depth, pixel):
    """(e_p, e_d) for a single reference pixel (x, y)."""
    x, y = int(pixel[0]), int(pixel[1])
    if not np.asarray(ref_depth)[y, x] > 0:
        raise InvalidInputError("reference depth at the pixel must be positive")
    e_p, e_d, _ = reprojection_errors_grid(ref_cam, ref_depth, nbr_cam, nbr_depth)
    return float(e_p[y, x]), float(e_d[y, x])


@dataclass
class AdaptiveK:
    k: float
    pass_fraction: float
    flagged: bool  # true when even K_MAX cannot reach the target


def _unscaled_views(views):
    out = []
    for v in views:
        if v.depth.shape[0] != v.cam.height or v.depth.shape[1] != v.cam.width:
            raise InvalidInputError(
                f"view {v.view_id}: depth grid {v.depth.shape} does not match camera"
            )
        f = v.scale_factor
        if f != 1.0:
            v = View(
                view_id=v.view_id,
                cam=v.cam.scaled(1.0 / f),
                depth=np.asarray(v.depth, dtype=np.float64) / f,
                image=v.image,
                neighbors=v.neighbors,
                scale_factor=1.0,
            )
        out.append(v)
    return out


def _gather_consistency(views, cfg: ConsistencyConfig):
    """Per view: threshold ratios and round-trip depths against each neighbor.

    The ratio of a (pixel, neighbor) pair is max(e_p / t1, e_d / t2); the
    pair satisfies the consistency test at scale k exactly when ratio < k.
    """
    by_id = {v.view_id: v for v in views}
    gathered = []
    for v in views:
        ratios = []
        rt_depths = []
        for nid in v.neighbors:
            if nid not in by_id:
                raise InvalidInputError(f"view {v.view_id} lists unknown neighbor {nid}")
            nbr = by_id[nid]
            e_p, e_d, rt = reprojection_errors_grid(v.cam, v.depth, nbr.cam, nbr.depth)
            ratios.append(np.maximum(e_p / cfg.pixel_threshold, e_d / cfg.depth_threshold))
            rt_depths.append(rt)
        gathered.append((v, np.stack(ratios), np.stack(rt_depths)))
    return gathered


def _pixel_pass_levels(gathered, cfg: ConsistencyConfig):
    """Minimum k at which each valid-depth pixel passes (inf if never)."""
    levels = []
    for v, ratios, _ in gathered:
        valid = np.asarray(v.depth) > 0
        n = ratios.shape[0]
        if n < cfg.min_consistent:
            lvl = np.full(valid.sum(), np.inf)
        else:
            # Pixel passes at k iff >= n_min neighbors have ratio < k, i.e.
            # k exceeds the n_min-th smallest ratio.
            part = np.partition(ratios[:, valid], cfg.min_consistent - 1, axis=0)
            lvl = part[cfg.min_consistent - 1]
        levels.append(lvl)
    if not levels:
        raise InvalidInputError("no views to stitch")
    return np.concatenate(levels)


def solve_k_for_levels(levels, pass_percent: float) -> AdaptiveK:
    """Bisection for the smallest k admitting ``pass_percent`` of pass levels.

    ``levels`` holds, per pixel, the minimum k at which that pixel passes
    (monotone: the pass set only grows with k). Solved to relative precision
    1e-3; if even ``K_MAX`` cannot reach the target the scene is flagged and
    ``K_MAX`` returned.
    """
    levels = np.sort(np.asarray(levels, dtype=np.float64).ravel())
    total = levels.size
    if total == 0:
        raise InvalidInputError("no valid-depth pixels in any view")
    target = pass_percent / 100.0

    def fraction(k):
        return np.searchsorted(levels, k, side="left") / total

    if fraction(K_MAX) < target:
        logger.warning(
            "scene flagged: only %.1f%% of pixels consistent even at k=%g",
            100 * fraction(K_MAX), K_MAX,
        )
        return AdaptiveK(k=K_MAX, pass_fraction=fraction(K_MAX), flagged=True)

    lo, hi = 0.0, K_MAX
    for _ in range(200):
        if hi - lo <= _BISECT_REL * hi + 1e-12:
            break
        mid = 0.5 * (lo + hi)
        if fraction(mid) >= target:
            hi = mid
        else:
            lo = mid
    return AdaptiveK(k=hi, pass_fraction=fraction(hi), flagged=False)


def solve_adaptive_k(views, cfg: ConsistencyConfig, gathered=None) -> AdaptiveK:
    """Scene-adaptive threshold scale for a set of views (see solve_k_for_levels)."""
    if gathered is None:
        gathered = _gather_consistency(_unscaled_views(views), cfg)
    return solve_k_for_levels(_pixel_pass_levels(gathered, cfg), cfg.pass_percent)


def stitch(views, cfg: ConsistencyConfig):
    """Fuse all reference-view depth maps into one point cloud.

    Args:
        views: List of View records, depth maps and cameras on the stitch
            grid. Scene-scale factors are divided back out first.
        cfg: Consistency thresholds and the target pass percentage.

    Returns:
        (cloud, solution): the stitched PointCloud and the AdaptiveK record
        used. An empty cloud (with a logged warning) results when no pixel
        passes.
    """
    views = _unscaled_views(views)
    gathered = _gather_consistency(views, cfg)
    solution = solve_adaptive_k(views, cfg, gathered=gathered)

    all_points = []
    all_colors = []
    for v, ratios, rt_depths in gathered:
        h, w = v.depth.shape
        depth = np.asarray(v.depth, dtype=np.float64)
        consistent = ratios < solution.k  # (N, H, W)
        count = consistent.sum(axis=0)
        passing = (count >= cfg.min_consistent) & (depth > 0)
        if not passing.any():
            continue
        # Mean of the reference depth and every consistent round-trip depth.
        rt_sum = np.where(consistent, rt_depths, 0.0).sum(axis=0)
        fused = (depth + rt_sum) / (1.0 + count)
        ys, xs = np.nonzero(passing)
        pixels = np.stack([xs, ys], axis=1).astype(np.float64)
        pts = v.cam.unproject(pixels, fused[ys, xs])
        all_points.append(pts)
        if v.image is not None:
            all_colors.append(v.image[ys, xs])
        else:
            all_colors.append(np.full((len(ys), 3), 200, dtype=np.uint8))

    if not all_points:
        logger.warning("stitching produced an empty point cloud (no pixel passed)")
        return PointCloud.empty(), solution
    cloud = PointCloud(
        points=np.concatenate(all_points).astype(np.float32),
        colors=np.concatenate(all_colors),
    )
    return cloud, solution
