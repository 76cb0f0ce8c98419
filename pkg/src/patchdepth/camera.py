"""Virtual pinhole camera: patch-to-depth-image projection and its inverse.

Camera convention: the camera sits at c + d*n and looks back at the surface,
so camera axes are x = u, y = -v, z = -n. Points at the stand-off distance d
then have positive depth d. Pixel (u, v) indexes (column, row); depth grids
are stored row-major as values[v, u].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from patchdepth.cloud import PointCloud
from patchdepth.patches import PatchFrame

MIN_DEPTH = 1e-6          # metres; points at or behind the pinhole are dropped
DEGENERATE_RANGE = 1e-9   # metres; z ranges below this normalize to a flat 0.5


class EmptyProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 128.0
    cy: float = 128.0
    height: int = 256
    width: int = 256
    d: float = 0.8  # stand-off distance, metres

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class BoundaryMask:
    """Axis-aligned bounding box of all valid pixels, inclusive."""

    rect: tuple  # (u_min, v_min, u_max, v_max)
    grid: np.ndarray  # H x W bool, True inside rect


@dataclass
class DepthImage:
    """H x W depth grid with validity mask, frame and normalization record.

    values holds camera-frame z in metres when normalized is False, or
    [0, 1]-scaled depth when True; invalid pixels are 0 either way.
    """

    values: np.ndarray
    valid: np.ndarray
    frame: PatchFrame
    intrinsics: CameraIntrinsics
    z_min: float | None = None
    z_max: float | None = None
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape:
            raise ValueError("values and valid shapes differ")
        if self.values.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("grid shape does not match intrinsics")


def _round_half_away(x):
    """Nearest integer, ties away from zero (np.round would round half to even)."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def camera_pose(frame: PatchFrame, d: float):
    """Camera origin and world-to-camera rotation for a patch frame.

    origin = c + d*n; rotation rows are (u, -v, -n), so camera coordinates are
    x_cam = R @ (x - origin) with +z pointing from the camera toward the patch.
    """
    origin = frame.center + d * frame.normal
    rotation = np.stack([frame.tangent, -frame.generatrix, -frame.normal])
    return origin, rotation


def world_to_camera(points, frame: PatchFrame, d: float):
    origin, rotation = camera_pose(frame, d)
    return (np.asarray(points, dtype=np.float64) - origin) @ rotation.T


def project(points_cam, frame: PatchFrame, intr: CameraIntrinsics) -> DepthImage:
    """Rasterise camera-frame points to a z-buffered depth image.

    Pixels are nearest-integer positions of (fx*x/z + cx, fy*y/z + cy); points
    with z <= MIN_DEPTH or landing outside the image are discarded, and the
    minimum z wins where several points share a pixel.
    """
    pts = np.asarray(points_cam, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected (N, 3) camera-frame points")
    z = pts[:, 2]
    keep = z > MIN_DEPTH
    pts, z = pts[keep], z[keep]
    u = _round_half_away(intr.fx * pts[:, 0] / z + intr.cx)
    v = _round_half_away(intr.fy * pts[:, 1] / z + intr.cy)
    inside = (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    if not inside.any():
        raise EmptyProjectionError("empty projection: no point maps into the image")
    ui = u[inside].astype(np.intp)
    vi = v[inside].astype(np.intp)
    zi = z[inside]

    values = np.full((intr.height, intr.width), np.inf)
    np.minimum.at(values, (vi, ui), zi)
    valid = np.isfinite(values)
    values[~valid] = 0.0
    return DepthImage(values=values, valid=valid, frame=frame, intrinsics=intr)


def boundary_mask(img: DepthImage) -> BoundaryMask:
    """Tight inclusive bounding box of the valid pixels."""
    if not img.valid.any():
        raise ValueError("image has no valid pixels")
    rows, cols = np.nonzero(img.valid)
    rect = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
    grid = np.zeros_like(img.valid)
    grid[rect[1]:rect[3] + 1, rect[0]:rect[2] + 1] = True
    return BoundaryMask(rect=rect, grid=grid)


def normalize_depth(img: DepthImage) -> DepthImage:
    """Map valid depths linearly onto [0, 1], recording (z_min, z_max).

    Degenerate ranges (< DEGENERATE_RANGE) map every valid pixel to 0.5.
    Invalid pixels stay 0.
    """
    if not img.valid.any():
        raise ValueError("image has no valid pixels")
    z = img.values[img.valid]
    z_min, z_max = float(z.min()), float(z.max())
    values = np.zeros_like(img.values)
    if z_max - z_min < DEGENERATE_RANGE:
        values[img.valid] = 0.5
    else:
        values[img.valid] = (z - z_min) / (z_max - z_min)
    return DepthImage(
        values=values,
        valid=img.valid.copy(),
        frame=img.frame,
        intrinsics=img.intrinsics,
        z_min=z_min,
        z_max=z_max,
        normalized=True,
    )


def denormalize_values(img: DepthImage):
    """Metric depths of the valid pixels, undoing the [0, 1] scaling."""
    if not img.normalized:
        return img.values.copy()
    if img.z_min is None or img.z_max is None:
        raise ValueError("normalized image lacks its (z_min, z_max) record")
    return img.z_min + img.values * (img.z_max - img.z_min)


def back_project(img: DepthImage) -> PointCloud:
    """Lift every valid pixel back to a world-space point through the camera.

    Pixels are taken at their integer centers, so positions carry up to half a
    pixel of quantisation; depths are exact.
    """
    intr = img.intrinsics
    z_grid = denormalize_values(img)
    rows, cols = np.nonzero(img.valid)
    z = z_grid[rows, cols]
    x = (cols - intr.cx) * z / intr.fx
    y = (rows - intr.cy) * z / intr.fy
    cam = np.stack([x, y, z], axis=1)
    origin, rotation = camera_pose(img.frame, intr.d)
    world = cam @ rotation + origin  # rotation is orthonormal: inverse = transpose
    return PointCloud(world)
