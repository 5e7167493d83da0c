"""Camera models, disparity/depth conversion, and epipolar reprojection.

Cameras follow the world-to-camera convention ``x ~ K (R X + t)`` with
translations in millimetres. The feature grid produced by the encoders is
``downsize`` times smaller than the image; feature pixel (a, b) sits at
full-image coordinate (a*downsize + (downsize-1)/2, ...), i.e. at the centre
of its downsampled cell.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidDisparityError, InvalidInputError

SCALE_MODES = ("gt-median-600", "sparse-min-400", "none")

# Below this the third homogeneous component counts as "at/behind the camera
# plane" and the reprojection is marked invalid.
MIN_HOMOGENEOUS_Z = 1e-9


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics K, world-to-camera pose (R, t), image size."""

    k: np.ndarray
    r: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.float64).reshape(3, 3)
        r = np.asarray(self.r, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise InvalidInputError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(r), 1.0, atol=1e-6):
            raise InvalidInputError("rotation determinant must be +1")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if not np.allclose(k[np.tril_indices(3, -1)], 0.0, atol=1e-9):
            raise InvalidInputError("intrinsics must be upper-triangular")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image extents must be positive")

    def scaled(self, factor: float) -> "CameraModel":
        """Camera with translation scaled by ``factor`` (scene rescale)."""
        return replace(self, t=self.t * float(factor))

    def resized(self, factor: float) -> "CameraModel":
        """Camera for an image resized by ``factor`` (intrinsics rescale)."""
        k = self.k.copy()
        # Pixel (i) in the resized image sits at (i + 0.5)/factor - 0.5 in the
        # original one; principal point shifts accordingly.
        k[0, 0] *= factor
        k[1, 1] *= factor
        k[0, 1] *= factor
        k[0, 2] = (k[0, 2] + 0.5) * factor - 0.5
        k[1, 2] = (k[1, 2] + 0.5) * factor - 0.5
        return replace(
            self,
            k=k,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )

    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.r.T @ self.t

    def project(self, points: np.ndarray):
        """Project world points (N, 3) to pixels (N, 2) and depths (N,)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = points @ self.r.T + self.t
        hom = cam @ self.k.T
        depth = hom[:, 2]
        safe = np.where(np.abs(depth) < MIN_HOMOGENEOUS_Z, 1.0, depth)
        pix = hom[:, :2] / safe[:, None]
        return pix, depth

    def unproject(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Lift pixels (N, 2) at camera depths (N,) to world points (N, 3)."""
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        depths = np.asarray(depths, dtype=np.float64).reshape(-1)
        hom = np.concatenate([pixels, np.ones((pixels.shape[0], 1))], axis=1)
        rays = hom @ np.linalg.inv(self.k).T
        cam = rays * depths[:, None]
        return (cam - self.t) @ self.r


def disparity_to_depth(d: float) -> float:
    """Invert a single disparity (1/mm) to depth (mm)."""
    if not d > 0:
        raise InvalidDisparityError(f"disparity must be positive, got {d}")
    return 1.0 / d


def feature_to_image(coord, downsize: int):
    """Feature-grid coordinate(s) to full-image pixel coordinate(s)."""
    return np.asarray(coord, dtype=np.float64) * downsize + (downsize - 1) / 2.0


def image_to_feature(coord, downsize: int):
    return (np.asarray(coord, dtype=np.float64) - (downsize - 1) / 2.0) / downsize


def relative_pose(ref: CameraModel, nbr: CameraModel):
    """(R_rel, t_rel) taking reference-camera coordinates to neighbor ones."""
    r_rel = nbr.r @ ref.r.T
    t_rel = nbr.t - r_rel @ ref.t
    return r_rel, t_rel


def epipolar_basis(ref: CameraModel, nbr: CameraModel, pixels, downsize: int):
    """Per-pixel linear parametrization of the epipolar reprojection.

    The homogeneous neighbor-view coordinate of a reference feature pixel at
    inverse depth sigma is ``base + sigma * delta``; this returns ``base``
    (P, 3) for the given feature pixels (P, 2) and the constant ``delta`` (3,).
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    full = feature_to_image(pixels, downsize)
    hom = np.concatenate([full, np.ones((full.shape[0], 1))], axis=1)
    r_rel, t_rel = relative_pose(ref, nbr)
    base = hom @ np.linalg.inv(ref.k).T @ r_rel.T @ nbr.k.T
    delta = nbr.k @ t_rel
    return base, delta


def normalize_epipolar(base, delta, sigma, downsize: int):
    """Evaluate the epipolar map at inverse depths and return feature coords.

    Args:
        base: (P, 3) from :func:`epipolar_basis`.
        delta: (3,) from :func:`epipolar_basis`.
        sigma: scalar or (P,) inverse depths.
        downsize: feature-grid downsize ratio.

    Returns:
        (coords, valid): (P, 2) feature coordinates in the neighbor view and
        a (P,) bool mask; entries with third homogeneous component at or
        behind the camera plane are invalid (coords forced to 0 there).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    hom = base + sigma[..., None] * delta
    z = hom[..., 2]
    valid = z > MIN_HOMOGENEOUS_Z
    safe = np.where(valid, z, 1.0)
    full = hom[..., :2] / safe[..., None]
    coords = image_to_feature(full, downsize)
    coords[~valid] = 0.0
    return coords, valid


def epipolar_coords(ref: CameraModel, nbr: CameraModel, pixel, disparities, downsize: int = 1):
    """Neighbor-view feature coordinates of one reference pixel swept in depth.

    Args:
        ref, nbr: Reference and neighbor cameras.
        pixel: (u, v) feature-grid coordinate in the reference view.
        disparities: Iterable of non-negative inverse depths (1/mm).
        downsize: Feature-grid downsize ratio.

    Returns:
        (coords, valid): (D, 2) float coordinates (feature pixels in the
        neighbor view) and a (D,) validity mask. The map is linear in the
        inverse depth; disparity 0 yields the infinite-homography point.
    """
    disparities = np.asarray(disparities, dtype=np.float64).reshape(-1)
    if (disparities < 0).any():
        raise InvalidInputError("disparities must be non-negative")
    base, delta = epipolar_basis(ref, nbr, np.asarray(pixel, dtype=np.float64), downsize)
    coords, valid = normalize_epipolar(
        np.repeat(base, disparities.size, axis=0), delta, disparities, downsize
    )
    return coords, valid


@dataclass(frozen=True)
class SceneScale:
    """Multiplicative rescale bringing one reference view to canonical depth."""

    factor: float
    mode: str

    def __post_init__(self):
        if not self.factor > 0:
            raise InvalidInputError(f"scale factor must be positive, got {self.factor}")

    def apply(self, cams):
        """Scale camera translations; intrinsics and rotations unchanged."""
        return [cam.scaled(self.factor) for cam in cams]

    def unscale_depth(self, depth):
        """Bring predicted depths back to the original scene scale."""
        return np.asarray(depth) / self.factor


def scale_scene(cams, depth_reference, mode: str) -> SceneScale:
    """Compute the per-view scene scale from a depth reference.

    Args:
        cams: Cameras of the reference view and its neighbors (only checked
            for non-emptiness; the factor applies to all of them).
        depth_reference: Ground-truth depth values (mode "gt-median-600") or
            sparse reliable-point depths (mode "sparse-min-400"). Ignored for
            mode "none".
        mode: One of ``SCALE_MODES``.

    Returns:
        SceneScale whose factor makes the reference median 600 mm, the sparse
        minimum 400 mm, or 1.0 for mode "none".
    """
    if mode not in SCALE_MODES:
        raise InvalidInputError(f"unknown scale mode {mode!r}")
    if not cams:
        raise InvalidInputError("need at least one camera")
    if mode == "none":
        return SceneScale(1.0, mode)
    ref = np.asarray(depth_reference, dtype=np.float64).reshape(-1)
    ref = ref[ref > 0]
    if ref.size == 0:
        raise InvalidInputError("depth reference is empty or all non-positive")
    if mode == "gt-median-600":
        anchor = float(np.median(ref))
        target = 600.0
    else:
        anchor = float(ref.min())
        target = 400.0
    if anchor <= 0:
        raise InvalidInputError("degenerate depth reference")
    return SceneScale(target / anchor, mode)
