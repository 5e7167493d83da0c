"""Synthetic multiview scenes with exact ground truth, plus test oracles.

Scenes are planes and spheres textured by a seeded value-noise field. Every
view's depth map is the exact ray/surface intersection, so depth maps are
cross-view consistent by construction and matching pixels in different views
sample the same surface texture. Feature maps can be rendered directly from
the texture (bypassing the learned encoders) for geometric tests of the cost
volume; a brute-force scalar correlation serves as the oracle for the
vectorized volume builder; and a small gradient-descent routine fits the two
decoder layers of an otherwise frozen random network, producing the tiny
bundled checkpoint used by end-to-end runs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .fileio import (
    write_camera,
    write_min_depths,
    write_neighbor_lists,
    write_pfm,
    write_ply,
    write_ppm,
)
from .geometry import CameraModel, scale_scene
from .recurrent import RunRecord, WeightSet, run_inference
from .supervision import LossConfig, loss as supervision_loss, w_schedule
from .tensor_core import im2col

logger = logging.getLogger(__name__)

_U64 = np.uint64


# ---------------------------------------------------------------------------
# seeded value noise


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x + _U64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> _U64(27))) * _U64(0x94D049BB133111EB)
    return x ^ (x >> _U64(31))


def _lattice_values(ix, iy, iz, seed: int):
    """Deterministic value in [-0.5, 0.5) per integer lattice node."""
    h = _splitmix(np.full(ix.shape, seed & 0xFFFFFFFFFFFFFFFF, dtype=_U64))
    h = _splitmix(h ^ ix.astype(np.int64).astype(_U64))
    h = _splitmix(h ^ iy.astype(np.int64).astype(_U64))
    h = _splitmix(h ^ iz.astype(np.int64).astype(_U64))
    return (h >> _U64(11)).astype(np.float64) * 2.0**-53 - 0.5


def _noise_octave(pts, seed: int):
    base = np.floor(pts)
    cell = base.astype(np.int64)
    f = pts - base
    u = f * f * (3.0 - 2.0 * f)  # smoothstep keeps the field C1
    total = np.zeros(pts.shape[0])
    for dx in (0, 1):
        wx = u[:, 0] if dx else 1.0 - u[:, 0]
        for dy in (0, 1):
            wy = u[:, 1] if dy else 1.0 - u[:, 1]
            for dz in (0, 1):
                wz = u[:, 2] if dz else 1.0 - u[:, 2]
                v = _lattice_values(
                    cell[:, 0] + dx, cell[:, 1] + dy, cell[:, 2] + dz, seed
                )
                total += wx * wy * wz * v
    return total


def value_noise(points, seed: int, scale: float, octaves: int = 4, persistence: float = 0.5):
    """Multi-octave trilinear value noise over 3-D points, roughly [-0.5, 0.5]."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    total = np.zeros(pts.shape[0])
    amp, norm, freq = 1.0, 0.0, 1.0 / scale
    for octave in range(octaves):
        total += amp * _noise_octave(pts * freq, seed * 1_000_003 + octave)
        norm += amp
        amp *= persistence
        freq *= 2.0
    return total / norm


# ---------------------------------------------------------------------------
# surfaces and scene specification


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        num = (np.asarray(self.point, dtype=np.float64) - origin) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(np.abs(denom) > 1e-12, num / denom, np.inf)
        return np.where(z > 1e-6, z, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def intersect(self, origin, dirs):
        oc = origin - np.asarray(self.center, dtype=np.float64)
        a = (dirs * dirs).sum(axis=1)
        b = 2.0 * dirs @ oc
        c = oc @ oc - self.radius**2
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        z1 = (-b - sq) / (2.0 * a)
        z2 = (-b + sq) / (2.0 * a)
        z = np.where(z1 > 1e-6, z1, z2)
        return np.where(hit & (z > 1e-6), z, np.inf)


@dataclass
class SceneSpec:
    """Camera-ring multiview scene description (parsed from key=value text)."""

    seed: int = 0
    width: int = 160
    height: int = 120
    num_views: int = 5
    focal: float = 300.0  # pixels
    target_depth: float = 550.0  # mm from the ring to the look-at point
    baseline: float = 260.0  # mm between adjacent camera centres
    texture_scale: float = 80.0  # mm wavelength of the coarsest noise octave
    texture_octaves: int = 4
    feature_dim: int = 16
    surfaces: list = field(default_factory=lambda: [Plane((0, 0, 550.0), (0, 0, -1.0))])


def parse_scene_spec(text: str) -> SceneSpec:
    """Parse the flat key=value scene format; ``surface`` keys may repeat."""
    spec = SceneSpec(surfaces=[])
    casts = {
        "seed": int, "width": int, "height": int, "num_views": int,
        "focal": float, "target_depth": float, "baseline": float,
        "texture_scale": float, "texture_octaves": int, "feature_dim": int,
    }
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInputError(f"scene spec line {lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "surface":
            parts = value.split()
            try:
                if parts[0] == "plane" and len(parts) == 7:
                    nums = [float(v) for v in parts[1:]]
                    spec.surfaces.append(Plane(tuple(nums[:3]), tuple(nums[3:])))
                elif parts[0] == "sphere" and len(parts) == 5:
                    nums = [float(v) for v in parts[1:]]
                    spec.surfaces.append(Sphere(tuple(nums[:3]), nums[3]))
                else:
                    raise ValueError(f"unknown surface {value!r}")
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"scene spec line {lineno}: {exc}") from exc
        elif key in casts:
            setattr(spec, key, casts[key](value))
        else:
            raise InvalidInputError(f"scene spec line {lineno}: unknown key {key!r}")
    if not spec.surfaces:
        spec.surfaces = SceneSpec().surfaces
    return spec


def format_scene_spec(spec: SceneSpec) -> str:
    lines = [
        f"seed = {spec.seed}",
        f"width = {spec.width}",
        f"height = {spec.height}",
        f"num_views = {spec.num_views}",
        f"focal = {spec.focal:g}",
        f"target_depth = {spec.target_depth:g}",
        f"baseline = {spec.baseline:g}",
        f"texture_scale = {spec.texture_scale:g}",
        f"texture_octaves = {spec.texture_octaves}",
        f"feature_dim = {spec.feature_dim}",
    ]
    for s in spec.surfaces:
        if isinstance(s, Plane):
            p, n = s.point, s.normal
            lines.append(
                "surface = plane "
                + " ".join(f"{v:g}" for v in (*p, *n))
            )
        else:
            lines.append(
                "surface = sphere "
                + " ".join(f"{v:g}" for v in (*s.center, s.radius))
            )
    return "\n".join(lines) + "\n"


def _look_at(center, target):
    z = np.asarray(target, dtype=np.float64) - center
    z = z / np.linalg.norm(z)
    down = np.array([0.0, 1.0, 0.0])
    y = down - (down @ z) * z
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    r = np.stack([x, y, z])
    return r, -r @ center


# ---------------------------------------------------------------------------
# scene generation and rendering


@dataclass
class SyntheticScene:
    spec: SceneSpec
    cams: list  # full-resolution CameraModel per view

    def __post_init__(self):
        self._depth_cache = {}

    @property
    def num_views(self) -> int:
        return len(self.cams)

    def _rays(self, view: int, downsize: int):
        """Ray origin and per-pixel directions such that X = C + depth * dir."""
        cam = self.cams[view]
        h, w = self.spec.height // downsize, self.spec.width // downsize
        ys, xs = np.mgrid[0:h, 0:w]
        full_x = feature_to_image_coords(xs.ravel(), downsize)
        full_y = feature_to_image_coords(ys.ravel(), downsize)
        hom = np.stack([full_x, full_y, np.ones_like(full_x)], axis=1)
        dirs = hom @ np.linalg.inv(cam.k).T @ cam.r
        return cam.center(), dirs, (h, w)

    def depth_map(self, view: int, downsize: int = 1) -> np.ndarray:
        """Exact nearest-intersection depth (mm); 0 where every ray misses."""
        key = (view, downsize)
        if key not in self._depth_cache:
            origin, dirs, shape = self._rays(view, downsize)
            z = np.full(dirs.shape[0], np.inf)
            for surface in self.spec.surfaces:
                z = np.minimum(z, surface.intersect(origin, dirs))
            z = np.where(np.isfinite(z), z, 0.0)
            self._depth_cache[key] = z.reshape(shape).astype(np.float32)
        return self._depth_cache[key]

    def disparity_map(self, view: int, downsize: int = 1) -> np.ndarray:
        depth = self.depth_map(view, downsize).astype(np.float64)
        out = np.zeros_like(depth)
        np.divide(1.0, depth, out=out, where=depth > 0)
        return out.astype(np.float32)

    def surface_points(self, view: int, downsize: int = 1):
        """World intersection points (P, 3) and their validity mask (P,)."""
        origin, dirs, shape = self._rays(view, downsize)
        depth = self.depth_map(view, downsize).ravel().astype(np.float64)
        valid = depth > 0
        pts = origin + dirs * depth[:, None]
        pts[~valid] = 0.0
        return pts, valid, shape

    def _texture_channels(self, points, valid, channels: int, tag: int):
        """Decorrelated texture samples: one noise offset per channel."""
        rng = np.random.default_rng(self.spec.seed * 7919 + tag)
        offsets = rng.uniform(-1e5, 1e5, size=(channels, 3))
        stacked = points[None, :, :] + offsets[:, None, :]
        vals = value_noise(
            stacked.reshape(-1, 3),
            self.spec.seed,
            self.spec.texture_scale,
            self.spec.texture_octaves,
        ).reshape(channels, -1)
        vals[:, ~valid] = 0.0
        return vals

    def feature_maps(self, view: int, downsize: int = 1) -> np.ndarray:
        """(Df, h, w) matching features rendered straight from the texture.

        Channels are independent texture samples mixed by one seeded
        orthonormal matrix shared across views, so geometrically matching
        pixels carry equal features by construction.
        """
        pts, valid, shape = self.surface_points(view, downsize)
        df = self.spec.feature_dim
        vals = self._texture_channels(pts, valid, df, tag=1)
        rng = np.random.default_rng(self.spec.seed * 7919 + 91)
        q, _ = np.linalg.qr(rng.normal(size=(df, df)))
        mixed = q @ vals
        mixed[:, ~valid] = 0.0
        return mixed.reshape(df, *shape).astype(np.float32)

    def image(self, view: int) -> np.ndarray:
        """(H, W, 3) uint8 rendering of the texture; black where rays miss."""
        pts, valid, shape = self.surface_points(view, downsize=1)
        rgb = self._texture_channels(pts, valid, 3, tag=2)
        img = np.clip(128.0 + 220.0 * rgb, 0, 255).astype(np.uint8)
        img = img.T.reshape(*shape, 3)
        img[~valid.reshape(shape)] = 0
        return img

    def covisible_mask(self, ref: int, nbr: int, downsize: int = 1) -> np.ndarray:
        """Pixels of ``ref`` whose surface point is also seen by ``nbr``.

        Exact: the reference surface point is projected into the neighbor and
        compared against a fresh ray cast there, so occlusion and
        out-of-view pixels are excluded without any interpolation.
        """
        pts, valid, shape = self.surface_points(ref, downsize)
        cam = self.cams[nbr]
        pix, z = cam.project(pts)
        inside = (
            (pix[:, 0] >= 0)
            & (pix[:, 0] <= self.spec.width - 1)
            & (pix[:, 1] >= 0)
            & (pix[:, 1] <= self.spec.height - 1)
            & (z > 0)
        )
        origin = cam.center()
        dirs = np.concatenate([pix, np.ones((pix.shape[0], 1))], axis=1)
        dirs = dirs @ np.linalg.inv(cam.k).T @ cam.r
        cast = np.full(dirs.shape[0], np.inf)
        for surface in self.spec.surfaces:
            cast = np.minimum(cast, surface.intersect(origin, dirs))
        same = np.abs(cast - z) <= 1e-3 * np.maximum(z, 1.0)
        return (valid & inside & same).reshape(shape)


def feature_to_image_coords(coord, downsize: int):
    return np.asarray(coord, dtype=np.float64) * downsize + (downsize - 1) / 2.0


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Build the camera ring and verify it actually sees the surfaces."""
    if spec.num_views < 2:
        raise InvalidInputError("a multiview scene needs at least 2 views")
    if spec.width % 4 or spec.height % 4:
        raise InvalidInputError("image extents must be divisible by 4")
    target = np.array([0.0, 0.0, spec.target_depth])
    step = spec.baseline / spec.target_depth  # radians between adjacent views
    k = np.array(
        [
            [spec.focal, 0.0, (spec.width - 1) / 2.0],
            [0.0, spec.focal, (spec.height - 1) / 2.0],
            [0.0, 0.0, 1.0],
        ]
    )
    cams = []
    for i in range(spec.num_views):
        angle = (i - (spec.num_views - 1) / 2.0) * step
        center = target + spec.target_depth * np.array(
            [math.sin(angle), 0.0, -math.cos(angle)]
        )
        r, t = _look_at(center, target)
        cams.append(CameraModel(k=k, r=r, t=t, width=spec.width, height=spec.height))
    scene = SyntheticScene(spec=spec, cams=cams)
    if not any((scene.depth_map(v) > 0).any() for v in range(spec.num_views)):
        raise InvalidInputError("no camera sees any surface")
    return scene


def neighbor_table(scene: SyntheticScene) -> dict:
    """Every other view ordered by ring proximity."""
    n = scene.num_views
    return {
        i: sorted((j for j in range(n) if j != i), key=lambda j: (abs(j - i), j))
        for i in range(n)
    }


def export_scene(scene: SyntheticScene, out_dir) -> Path:
    """Write the camera/image/depth/neighbor files the pipeline consumes.

    Emits per view: cam_XXXX.txt, image_XXXX.ppm, depth_XXXX.pfm (exact
    ground truth); plus pairs.txt, min_depths.txt, the scene spec, and a
    ground-truth point cloud gt_cloud.ply unprojected from all views.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    min_depths = {}
    gt_points = []
    gt_colors = []
    for v in range(scene.num_views):
        depth = scene.depth_map(v)
        image = scene.image(v)
        write_camera(out_dir / f"cam_{v:04d}.txt", scene.cams[v], d_min=float(depth[depth > 0].min()))
        write_ppm(out_dir / f"image_{v:04d}.ppm", image)
        write_pfm(out_dir / f"depth_{v:04d}.pfm", depth)
        min_depths[v] = float(depth[depth > 0].min())
        ys, xs = np.nonzero(depth > 0)
        pts = scene.cams[v].unproject(
            np.stack([xs, ys], axis=1).astype(np.float64), depth[ys, xs]
        )
        gt_points.append(pts.astype(np.float32))
        gt_colors.append(image[ys, xs])
    write_neighbor_lists(out_dir / "pairs.txt", neighbor_table(scene))
    write_min_depths(out_dir / "min_depths.txt", min_depths)
    (out_dir / "scene.txt").write_text(format_scene_spec(scene.spec))
    write_ply(out_dir / "gt_cloud.ply", np.concatenate(gt_points), np.concatenate(gt_colors))
    return out_dir


# ---------------------------------------------------------------------------
# brute-force oracle for the cost volume


def brute_force_cost(ref_feat, nbr_feat, ref_cam, nbr_cam, pixel, disparities, downsize=1):
    """Scalar, loop-based epipolar correlation for one reference pixel.

    Independent of the vectorized volume builder: plain-Python 3x3 matrix
    arithmetic, a 4-tap bilinear loop, and an explicit dot product. Used
    only as a test oracle.
    """
    ref_feat = np.asarray(ref_feat, dtype=np.float32)
    nbr_feat = np.asarray(nbr_feat, dtype=np.float32)
    df, h, w = ref_feat.shape
    u, v = pixel
    fx = u * downsize + (downsize - 1) / 2.0
    fy = v * downsize + (downsize - 1) / 2.0

    kref_inv = np.linalg.inv(ref_cam.k)
    r_rel = nbr_cam.r @ ref_cam.r.T
    t_rel = nbr_cam.t - r_rel @ ref_cam.t

    p = [fx, fy, 1.0]
    ray = [sum(kref_inv[i][j] * p[j] for j in range(3)) for i in range(3)]
    rot = [sum(r_rel[i][j] * ray[j] for j in range(3)) for i in range(3)]

    out = []
    for sigma in disparities:
        cam = [rot[i] + sigma * t_rel[i] for i in range(3)]
        hom = [sum(nbr_cam.k[i][j] * cam[j] for j in range(3)) for i in range(3)]
        if hom[2] <= 1e-9:
            out.append(0.0)
            continue
        x = (hom[0] / hom[2] - (downsize - 1) / 2.0) / downsize
        y = (hom[1] / hom[2] - (downsize - 1) / 2.0) / downsize
        if x < 0 or x > w - 1 or y < 0 or y > h - 1:
            out.append(0.0)
            continue
        x0, y0 = int(math.floor(x)), int(math.floor(y))
        x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
        wx, wy = x - x0, y - y0
        acc = 0.0
        for c in range(df):
            sample = (
                float(nbr_feat[c, y0, x0]) * (1 - wx) * (1 - wy)
                + float(nbr_feat[c, y0, x1]) * wx * (1 - wy)
                + float(nbr_feat[c, y1, x0]) * (1 - wx) * wy
                + float(nbr_feat[c, y1, x1]) * wx * wy
            )
            acc += float(ref_feat[c, v, u]) * sample
        out.append(acc / math.sqrt(df))
    return out


# ---------------------------------------------------------------------------
# tiny checkpoint fitting (decoder layers only)


@dataclass
class FitCase:
    """One reference view ready for fitting: inputs plus feature-grid truth."""

    ref_image: np.ndarray
    nbr_images: list
    cams: list
    gt_disparity: np.ndarray  # (H/4, W/4), same scale as the cameras
    valid_mask: np.ndarray


@dataclass
class FitReport:
    losses: list
    initial_error: float
    final_error: float


def _decoder_gradients(ws: WeightSet, record: RunRecord, grads):
    """Backpropagate the loss through the disparity accumulation.

    Only the two linear decoders receive gradients; hidden states are
    treated as constants, which keeps the whole chain analytic. The
    non-negativity clamp of the driver uses a straight-through gradient
    (derivative 1 even where it clips): the true subgradient is 0 there,
    which permanently kills a decoder whose bias once goes negative.
    """
    t1 = ws.hyper.t1
    acc = {}
    d_running = np.zeros_like(grads[-1])
    for t in reversed(range(len(grads))):
        d_running = d_running + grads[t]
        name = "dec1" if t < t1 else "dec2"
        cols = im2col(record.hiddens[t], 3, 3, 1, 1)
        gw = (d_running.ravel() @ cols).reshape(ws.params[f"{name}.conv.w"].shape)
        gb = d_running.sum()
        if name not in acc:
            acc[name] = [gw, gb]
        else:
            acc[name][0] += gw
            acc[name][1] += gb
    return acc


def fit_tiny_checkpoint(cases, ws: WeightSet, steps: int, lr: float,
                        gamma: float = 0.9, kappa: float = 100.0,
                        balance: float = 2.8e-6) -> tuple:
    """Fit only the decoder layers by plain gradient descent.

    All other weights stay at their seeded values. The loss is the dynamic
    disparity+depth objective with its mixing weight ramped linearly over
    the fitting steps. Aborts when the loss exceeds ten times its initial
    value.

    Returns:
        (fitted WeightSet, FitReport). ``steps == 0`` returns the input
        weights unchanged (new WeightSet, identical arrays).
    """
    if not cases:
        raise InvalidInputError("need at least one fitting case")
    params = {k: v.copy() for k, v in ws.params.items()}
    fitted = WeightSet(params=params, hyper=ws.hyper)

    def run_epoch(weights, w_mix, apply_grads):
        total = 0.0
        grad_acc = {}
        for case in cases:
            record = RunRecord()
            run_inference(case.ref_image, case.nbr_images, case.cams, weights, record=record)
            cfg = LossConfig(gamma=gamma, kappa=kappa, balance=balance,
                             w=w_mix, valid_mask=case.valid_mask)
            value, grads = supervision_loss(record.preds, case.gt_disparity, cfg)
            total += value
            if apply_grads:
                for name, (gw, gb) in _decoder_gradients(weights, record, grads).items():
                    if name not in grad_acc:
                        grad_acc[name] = [gw, gb]
                    else:
                        grad_acc[name][0] += gw
                        grad_acc[name][1] += gb
        return total, grad_acc

    losses = []
    initial = None
    for step in range(steps):
        w_mix = w_schedule(step, steps)
        value, grad_acc = run_epoch(fitted, w_mix, apply_grads=True)
        losses.append(value)
        if initial is None:
            initial = value
        if value > 10.0 * initial:
            raise NumericalFailureError(
                f"fitting diverged at step {step}: loss {value:.6g} > 10x initial {initial:.6g}"
            )
        for name, (gw, gb) in grad_acc.items():
            params[f"{name}.conv.w"] = (params[f"{name}.conv.w"] - lr * gw).astype(np.float32)
            params[f"{name}.conv.b"] = (params[f"{name}.conv.b"] - lr * gb).astype(np.float32)

    report = FitReport(
        losses=losses,
        initial_error=losses[0] if losses else float("nan"),
        final_error=losses[-1] if losses else float("nan"),
    )
    return fitted, report


def fit_case_from_scene(scene: SyntheticScene, ref: int, num_neighbors: int) -> FitCase:
    """Build one fitting case in the canonical-median-depth frame."""
    neighbors = neighbor_table(scene)[ref][:num_neighbors]
    depth = scene.depth_map(ref)
    scale = scale_scene(
        [scene.cams[ref]], depth[depth > 0], "gt-median-600"
    )
    cams = scale.apply([scene.cams[ref]] + [scene.cams[j] for j in neighbors])
    gt_depth4 = scene.depth_map(ref, downsize=4).astype(np.float64) * scale.factor
    gt_disp = np.zeros_like(gt_depth4)
    np.divide(1.0, gt_depth4, out=gt_disp, where=gt_depth4 > 0)
    return FitCase(
        ref_image=scene.image(ref),
        nbr_images=[scene.image(j) for j in neighbors],
        cams=cams,
        gt_disparity=gt_disp.astype(np.float32),
        valid_mask=gt_depth4 > 0,
    )
