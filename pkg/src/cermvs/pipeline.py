"""Scene-directory orchestration shared by the service and the CLI.

A scene directory holds per-view files named by a zero-padded view id:
``cam_0000.txt`` (camera), ``image_0000.ppm``, optionally ``depth_0000.pfm``
(ground truth), plus ``pairs.txt`` (neighbor lists) and optionally
``min_depths.txt`` (sparse reliable-point minimum depth per view). Depth
stages write ``disp_0000.pfm`` disparity maps and a ``scale_factors.txt``
recording the per-view scene rescale they were predicted under.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .cost_volume import memory_estimate
from .depth_fusion import FusionConfig, bilinear_resize, disparity_to_depth_map, fuse_multires
from .errors import InvalidInputError
from .evalkit import CloudMetrics, cloud_distance_metrics
from .fileio import (
    read_camera,
    read_min_depths,
    read_neighbor_lists,
    read_pfm,
    read_ply,
    read_ppm,
    write_pfm,
    write_ply,
)
from .geometry import CameraModel, scale_scene
from .recurrent import load_checkpoint, run_inference
from .stitcher import ConsistencyConfig, View, stitch
from .synth import export_scene, generate_scene, parse_scene_spec

logger = logging.getLogger(__name__)

_CAM_RE = re.compile(r"cam_(\d{4})\.txt$")


@dataclass
class SceneView:
    view_id: int
    cam: CameraModel
    image: np.ndarray
    gt_depth_path: Path = None
    min_depth: float = None


def load_scene(scene_dir) -> tuple:
    """Read cameras, images, and neighbor lists of a scene directory."""
    scene_dir = Path(scene_dir)
    if not scene_dir.is_dir():
        raise FileNotFoundError(f"scene directory {scene_dir} does not exist")
    views = {}
    for cam_path in sorted(scene_dir.glob("cam_*.txt")):
        m = _CAM_RE.search(cam_path.name)
        if not m:
            continue
        vid = int(m.group(1))
        image_path = scene_dir / f"image_{vid:04d}.ppm"
        if not image_path.is_file():
            raise FileNotFoundError(f"missing image for view {vid}: {image_path}")
        image = read_ppm(image_path)
        camfile = read_camera(cam_path)
        cam = camfile.to_model(width=image.shape[1], height=image.shape[0])
        gt = scene_dir / f"depth_{vid:04d}.pfm"
        views[vid] = SceneView(
            view_id=vid,
            cam=cam,
            image=image,
            gt_depth_path=gt if gt.is_file() else None,
            min_depth=camfile.d_min if camfile.d_min > 0 else None,
        )
    if not views:
        raise FileNotFoundError(f"no cam_XXXX.txt files in {scene_dir}")
    pairs_path = scene_dir / "pairs.txt"
    if not pairs_path.is_file():
        raise FileNotFoundError(f"missing neighbor lists: {pairs_path}")
    pairs = read_neighbor_lists(pairs_path)
    min_path = scene_dir / "min_depths.txt"
    if min_path.is_file():
        for vid, depth in read_min_depths(min_path).items():
            if vid in views:
                views[vid].min_depth = depth
    return views, pairs


def _resize_image(image, factor: float) -> np.ndarray:
    if factor == 1.0:
        return image
    h, w = image.shape[:2]
    out_shape = (int(round(h * factor)), int(round(w * factor)))
    channels = [
        bilinear_resize(image[:, :, c].astype(np.float32), out_shape)
        for c in range(image.shape[2])
    ]
    return np.clip(np.rint(np.stack(channels, axis=2)), 0, 255).astype(np.uint8)


def _view_scale(view: SceneView, mode: str):
    if mode == "none":
        reference = [1.0]
    elif mode == "gt-median-600":
        if view.gt_depth_path is None:
            raise InvalidInputError(
                f"view {view.view_id}: scale mode gt-median-600 needs depth_{view.view_id:04d}.pfm"
            )
        depth = read_pfm(view.gt_depth_path)
        reference = depth[depth > 0]
    else:  # sparse-min-400
        if view.min_depth is None:
            raise InvalidInputError(
                f"view {view.view_id}: scale mode sparse-min-400 needs min_depths.txt "
                "or a positive d_min in the camera file"
            )
        reference = [view.min_depth]
    return scale_scene([view.cam], reference, mode)


def read_scale_factors(path) -> dict:
    factors = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts:
            factors[int(parts[0])] = float(parts[1])
    return factors


def write_scale_factors(path, factors: dict) -> None:
    with open(path, "w") as f:
        for vid in sorted(factors):
            f.write(f"{vid} {factors[vid]:.12g}\n")


def compute_depth_maps(
    scene_dir,
    weights_path,
    out_dir,
    cfg: PipelineConfig,
    resolution: str = "native",
    views: int = None,
    view_ids=None,
) -> dict:
    """Run recurrent inference for every reference view of a scene.

    Writes one ``disp_XXXX.pfm`` per view (disparity at feature resolution,
    in the scaled frame) plus ``scale_factors.txt``, and returns
    {view_id: output path}.
    """
    if resolution not in ("native", "2x"):
        raise InvalidInputError(f"resolution must be 'native' or '2x', got {resolution!r}")
    num_views = views if views is not None else (
        cfg.views_2x if resolution == "2x" else cfg.views_native
    )
    if num_views < 1:
        raise InvalidInputError("need at least one neighbor view")

    ws = load_checkpoint(weights_path)
    scene, pairs = load_scene(scene_dir)
    wanted = sorted(scene) if view_ids is None else sorted(view_ids)
    factor = 2.0 if resolution == "2x" else 1.0

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(vid: int):
        view = scene[vid]
        neighbor_ids = pairs.get(vid, [])
        if not neighbor_ids:
            raise InvalidInputError(f"view {vid} has no neighbors in pairs.txt")
        if num_views > len(neighbor_ids):
            logger.warning(
                "view %d: requested %d neighbors, only %d available",
                vid, num_views, len(neighbor_ids),
            )
        chosen = neighbor_ids[:num_views]
        scale = _view_scale(view, cfg.scale_mode)
        cams = [view.cam] + [scene[n].cam for n in chosen]
        cams = [c.resized(factor) for c in scale.apply(cams)]
        images = [_resize_image(scene[n].image, factor) for n in [vid] + chosen]
        disparity = run_inference(images[0], images[1:], cams, ws)
        path = out_dir / f"disp_{vid:04d}.pfm"
        write_pfm(path, disparity)
        return vid, path, scale.factor

    results = {}
    factors = {}
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            for vid, path, f in pool.map(process, wanted):
                results[vid] = path
                factors[vid] = f
    else:
        for vid in wanted:
            vid, path, f = process(vid)
            results[vid] = path
            factors[vid] = f
    write_scale_factors(out_dir / "scale_factors.txt", factors)
    return results


_DISP_RE = re.compile(r"disp_(\d{4})\.pfm$")


def _disparity_dir(path) -> dict:
    path = Path(path)
    found = {}
    for p in sorted(path.glob("disp_*.pfm")):
        m = _DISP_RE.search(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise FileNotFoundError(f"no disp_XXXX.pfm files in {path}")
    return found


def fuse_depth_dirs(lr_dir, hr_dir, out_dir, threshold: float) -> dict:
    """Per-view multiresolution fusion of two disparity directories."""
    lr = _disparity_dir(lr_dir)
    hr = _disparity_dir(hr_dir)
    common = sorted(set(lr) & set(hr))
    if not common:
        raise InvalidInputError("LR and HR directories share no view ids")
    lr_factors = read_scale_factors(Path(lr_dir) / "scale_factors.txt")
    hr_factors = read_scale_factors(Path(hr_dir) / "scale_factors.txt")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fcfg = FusionConfig(threshold=threshold)
    outputs = {}
    factors = {}
    for vid in common:
        if not np.isclose(lr_factors.get(vid, 1.0), hr_factors.get(vid, 1.0)):
            raise InvalidInputError(
                f"view {vid}: LR and HR disparities use different scene scales"
            )
        fused = fuse_multires(read_pfm(lr[vid]), read_pfm(hr[vid]), fcfg)
        path = out_dir / f"disp_{vid:04d}.pfm"
        write_pfm(path, fused)
        outputs[vid] = path
        factors[vid] = lr_factors.get(vid, 1.0)
    write_scale_factors(out_dir / "scale_factors.txt", factors)
    return outputs


def stitch_scene(
    scene_dir,
    depth_dir,
    out_ply,
    cfg: PipelineConfig,
    pass_percent: float = None,
) -> dict:
    """Stitch a directory of disparity maps into one PLY point cloud."""
    scene, pairs = load_scene(scene_dir)
    disp_paths = _disparity_dir(depth_dir)
    factors = {}
    factors_path = Path(depth_dir) / "scale_factors.txt"
    if factors_path.is_file():
        factors = read_scale_factors(factors_path)

    res_factor = 1.0 if cfg.stitch_resolution == "native" else 0.5
    views = []
    for vid, path in sorted(disp_paths.items()):
        if vid not in scene:
            raise InvalidInputError(f"disparity for unknown view {vid}")
        view = scene[vid]
        target = (
            int(round(view.cam.height * res_factor)),
            int(round(view.cam.width * res_factor)),
        )
        disp = bilinear_resize(read_pfm(path), target)
        depth = disparity_to_depth_map(disp)
        image = _resize_image(view.image, res_factor)
        views.append(
            View(
                view_id=vid,
                cam=view.cam.resized(res_factor),
                depth=depth,
                image=image,
                neighbors=[n for n in pairs.get(vid, []) if n in disp_paths],
                scale_factor=factors.get(vid, 1.0),
            )
        )
    ccfg = ConsistencyConfig(
        pixel_threshold=cfg.pixel_threshold,
        depth_threshold=cfg.depth_threshold,
        min_consistent=cfg.min_consistent,
        pass_percent=pass_percent if pass_percent is not None else cfg.pass_percent,
    )
    cloud, solution = stitch(views, ccfg)
    out_ply = Path(out_ply)
    out_ply.parent.mkdir(parents=True, exist_ok=True)
    write_ply(out_ply, cloud.points, cloud.colors)
    return {
        "ply": str(out_ply),
        "num_points": len(cloud),
        "k": solution.k,
        "pass_fraction": solution.pass_fraction,
        "flagged": solution.flagged,
    }


def evaluate_clouds(recon_ply, gt_ply, tau: float, max_dist: float = 20.0) -> CloudMetrics:
    recon, _ = read_ply(recon_ply)
    gt, _ = read_ply(gt_ply)
    return cloud_distance_metrics(recon, gt, tau=tau, max_dist=max_dist)


def synth_scene(spec_text: str, out_dir) -> dict:
    spec = parse_scene_spec(spec_text)
    scene = generate_scene(spec)
    export_scene(scene, out_dir)
    return {"scene_dir": str(out_dir), "views": scene.num_views}


def bench_memory(cfg: PipelineConfig, width: int = None, height: int = None, views: int = None):
    """Cascaded vs non-cascaded cost-volume element counts for a config."""
    w = width if width is not None else cfg.native_width
    h = height if height is not None else cfg.native_height
    n = views if views is not None else cfg.views_native
    fine_bins = (1 << (cfg.pyramid_levels - 1)) * cfg.lookup_radius
    return memory_estimate(
        num_bins=cfg.coarse_bins,
        num_fine_bins=fine_bins,
        levels=cfg.pyramid_levels,
        hf=h // 4,
        wf=w // 4,
        n=n,
        d_max=cfg.d_max,
        fine_increment=cfg.fine_increment,
    )
