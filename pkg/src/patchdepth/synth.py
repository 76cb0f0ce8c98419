"""Synthetic masonry surfaces with exact ground truth.

Generates running-bond brick walls (flat, or bent around a cylinder to mimic
an arch barrel) as point clouds, renders dense ground-truth depth maps by
exact ray-surface intersection, and simulates the sparsity/noise degradation
that restoration is meant to undo. Brick faces sit at a per-brick jittered
base height; mortar strips are recessed away from the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from patchdepth.camera import CameraIntrinsics, DepthImage, boundary_mask, camera_pose
from patchdepth.cloud import PointCloud
from patchdepth.patches import PatchFrame
from patchdepth.restore import MaskOperator, RestorationProblem


@dataclass(frozen=True)
class MasonrySpec:
    brick_w: float = 0.215          # metres (UK standard brick face)
    brick_h: float = 0.065
    mortar_gap: float = 0.01
    mortar_recess: float = 0.008    # mortar sits this far behind the brick plane
    brick_depth_jitter: float = 0.002  # per-brick normal-direction std
    bond_offset: float = 0.5        # row-to-row offset fraction (running bond)
    surface: str = "plane"          # "plane" or "cylinder"
    cylinder_radius: float | None = None
    extent: tuple = (1.6, 1.6)      # metres (width along rows, height across rows)

    def __post_init__(self):
        for name in ("brick_w", "brick_h", "mortar_gap", "mortar_recess"):
            if getattr(self, name) < 0 or (name in ("brick_w", "brick_h") and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if self.surface not in ("plane", "cylinder"):
            raise ValueError(f"surface must be 'plane' or 'cylinder', got {self.surface!r}")
        if self.surface == "cylinder" and not (self.cylinder_radius and self.cylinder_radius > 0):
            raise ValueError("cylinder surface needs a positive cylinder_radius")

    @property
    def pitch_a(self):
        return self.brick_w + self.mortar_gap

    @property
    def pitch_b(self):
        return self.brick_h + self.mortar_gap


@dataclass
class GroundTruth:
    """Dense metric depth with per-brick instance labels.

    labels: 0 where the pixel is mortar or the ray missed; brick pixels carry
    a positive id stable under the brick-lattice ordering.
    """

    dense_depth: np.ndarray
    present: np.ndarray
    labels: np.ndarray

    @property
    def brick_count(self):
        return int(len(np.unique(self.labels[self.labels > 0])))

    def instance_masks(self):
        return [(int(i), self.labels == i) for i in np.unique(self.labels[self.labels > 0])]


class WallSurface:
    """Realised masonry surface: spec plus the per-brick jitter table.

    Local coordinates (a, b) run along and across the brick rows. The height
    h(a, b) is the offset toward the camera: jitter for brick pixels,
    -mortar_recess for mortar.
    """

    def __init__(self, spec: MasonrySpec, seed: int):
        self.spec = spec
        self.seed = seed
        ex, ey = spec.extent
        # lattice window covering the extent, with margin for the bond offset
        self.r0 = int(np.floor(-ey / 2 / spec.pitch_b)) - 1
        r1 = int(np.ceil(ey / 2 / spec.pitch_b)) + 1
        self.c0 = int(np.floor(-ex / 2 / spec.pitch_a)) - 2
        c1 = int(np.ceil(ex / 2 / spec.pitch_a)) + 2
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xB1])))
        self.jitter = rng.normal(0.0, spec.brick_depth_jitter, size=(r1 - self.r0 + 1, c1 - self.c0 + 1))

    def classify(self, a, b):
        """Return (is_brick, row, col) for local surface coordinates."""
        spec = self.spec
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        row = np.floor(b / spec.pitch_b).astype(np.int64)
        fb = b - row * spec.pitch_b
        shift = np.mod(row * spec.bond_offset * spec.pitch_a, spec.pitch_a)
        col = np.floor((a - shift) / spec.pitch_a).astype(np.int64)
        fa = a - shift - col * spec.pitch_a
        is_brick = (fa < spec.brick_w) & (fb < spec.brick_h)
        return is_brick, row, col

    def height(self, a, b):
        is_brick, row, col = self.classify(a, b)
        ri = np.clip(row - self.r0, 0, self.jitter.shape[0] - 1)
        ci = np.clip(col - self.c0, 0, self.jitter.shape[1] - 1)
        return np.where(is_brick, self.jitter[ri, ci], -self.spec.mortar_recess)

    def brick_id(self, a, b):
        """Positive stable id for brick cells, 0 for mortar."""
        is_brick, row, col = self.classify(a, b)
        ri = row - self.r0
        ci = col - self.c0
        return np.where(is_brick, ri * (self.jitter.shape[1] + 1) + ci + 1, 0)

    def point(self, a, b, h=None):
        """Local (a, b) to world coordinates on the surface (at height h)."""
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if h is None:
            h = self.height(a, b)
        if self.spec.surface == "plane":
            return np.stack([a, b, np.broadcast_to(h, a.shape)], axis=-1)
        R = self.spec.cylinder_radius
        theta = a / R
        rad = R - np.asarray(h)
        return np.stack([rad * np.sin(theta), b, R - rad * np.cos(theta)], axis=-1)


def make_surface(spec: MasonrySpec, seed: int) -> WallSurface:
    return WallSurface(spec, seed)


def synth_wall(spec: MasonrySpec, density: float, noise_std: float, dropout: float, seed: int):
    """Sample a noisy point cloud from the masonry surface.

    Point count is Poisson(density * extent area); positions are uniform in
    the local (a, b) rectangle, lifted to the surface, perturbed by isotropic
    Gaussian noise and thinned by the dropout fraction. Deterministic per seed.
    Returns (cloud, surface); the surface handle renders matching ground truth.
    """
    if density <= 0:
        raise ValueError("density must be positive")
    if not (0.0 <= dropout < 1.0):
        raise ValueError("dropout must lie in [0, 1)")
    surface = make_surface(spec, seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xB2])))
    ex, ey = spec.extent
    n = int(rng.poisson(density * ex * ey))
    a = rng.uniform(-ex / 2, ex / 2, size=n)
    b = rng.uniform(-ey / 2, ey / 2, size=n)
    pts = surface.point(a, b)
    pts = pts + rng.normal(0.0, 1.0, size=pts.shape) * noise_std
    if dropout > 0:
        keep = rng.random(n) >= dropout
        pts = pts[keep]
    if pts.shape[0] == 0:
        raise ValueError("no surviving points (density too low or dropout too high)")
    return PointCloud(pts), surface


def _ray_surface_depth(surface: WallSurface, origin, dirs_world):
    """Exact depth (camera z units) where each ray meets the realised surface.

    Rays are classified against the base surface first, then re-intersected
    with the plane/cylinder at the classified cell's height. Misses yield NaN.
    """
    spec = surface.spec
    o = origin
    d = dirs_world
    if spec.surface == "plane":
        dz = d[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s0 = np.where(dz != 0, (0.0 - o[2]) / dz, np.nan)
        hit = o + s0[..., None] * d
        a, b = hit[..., 0], hit[..., 1]
        h = surface.height(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dz != 0, (h - o[2]) / dz, np.nan)
        s = np.where(s > 0, s, np.nan)
        return s, a, b
    R = spec.cylinder_radius

    def hit_radius(radius):
        A = d[..., 0] ** 2 + d[..., 2] ** 2
        B = 2 * (o[0] * d[..., 0] + (o[2] - R) * d[..., 2])
        C = o[0] ** 2 + (o[2] - R) ** 2 - radius ** 2
        disc = B * B - 4 * A * C
        with np.errstate(invalid="ignore"):
            root = np.sqrt(np.where(disc >= 0, disc, np.nan))
        s1 = (-B - root) / (2 * A)
        s2 = (-B + root) / (2 * A)
        s = np.where(s1 > 0, s1, s2)
        return np.where(s > 0, s, np.nan)

    s0 = hit_radius(np.broadcast_to(R, d.shape[:-1]))
    hit = o + s0[..., None] * d
    theta = np.arctan2(hit[..., 0], R - hit[..., 2])
    a = theta * R
    b = hit[..., 1]
    h = surface.height(a, b)
    s = hit_radius(R - h)
    return s, a, b


def synth_ground_truth(surface: WallSurface, frame: PatchFrame, intr: CameraIntrinsics) -> GroundTruth:
    """Dense depth and brick labels by exact per-pixel ray casting."""
    origin, rotation = camera_pose(frame, intr.d)
    vs, us = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us, dtype=np.float64)],
        axis=-1,
    )
    dirs_world = dirs_cam @ rotation  # camera z of a point at parameter s is exactly s
    s, a, b = _ray_surface_depth(surface, origin, dirs_world)
    present = np.isfinite(s)
    depth = np.where(present, s, 0.0)
    labels = np.zeros(s.shape, dtype=np.int64)
    labels[present] = surface.brick_id(a[present], b[present])
    # compact ids to 1..n in lattice order
    uniq = np.unique(labels[labels > 0])
    compact = np.zeros_like(labels)
    pos = labels > 0
    compact[pos] = np.searchsorted(uniq, labels[pos]) + 1
    return GroundTruth(dense_depth=depth, present=present, labels=compact)


def degrade(img: DepthImage, keep_fraction: float, noise_std: float, seed: int) -> RestorationProblem:
    """Simulate the sparsity + noise degradation on a normalized depth image.

    Each valid pixel survives independently with probability keep_fraction;
    survivors get additive Gaussian noise (std noise_std) clamped to [0, 1].
    The boundary mask is taken from the pre-degradation valid set.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError("keep_fraction must lie in (0, 1]")
    if not img.normalized:
        raise ValueError("degrade expects a normalized depth image")
    mask = boundary_mask(img)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xDE])))
    omega = img.valid & (rng.random(img.valid.shape) < keep_fraction)
    if not omega.any():
        raise ValueError("degradation removed every observed pixel")
    values = np.zeros_like(img.values)
    noisy = img.values + rng.normal(0.0, 1.0, size=img.values.shape) * noise_std
    values[omega] = np.clip(noisy[omega], 0.0, 1.0)
    degraded = DepthImage(
        values=values,
        valid=omega,
        frame=img.frame,
        intrinsics=img.intrinsics,
        z_min=img.z_min,
        z_max=img.z_max,
        normalized=True,
    )
    return RestorationProblem(y_tilde=degraded, operator=MaskOperator(omega), mask=mask, sigma_y=noise_std)
