"""Surface patch extraction: normal estimation, local frames and box crops.

Patch centers come from a voxel-downsampled cloud; each center gets a local
orthonormal frame {u, v, n} and an oriented box crop of the full cloud with a
square s x s face in the tangent plane and total thickness 2t along n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class CropParams:
    side: float = 0.8            # square face edge, metres
    half_thickness: float = 0.25  # half extent along the normal, metres
    ball_radius: float = 0.4      # normal-estimation neighbourhood, metres

    def __post_init__(self):
        for name in ("side", "half_thickness", "ball_radius"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True, eq=False)
class PatchFrame:
    """Right-handed orthonormal frame at a patch center: u = v x n."""

    center: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray     # u, image x direction
    generatrix: np.ndarray  # v, image -y direction

    def __post_init__(self):
        for name in ("center", "normal", "tangent", "generatrix"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        u, v, n = self.tangent, self.generatrix, self.normal
        for vec, name in ((u, "tangent"), (v, "generatrix"), (n, "normal")):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-6:
                raise ValueError(f"{name} is not unit length")
        if max(abs(u @ v), abs(u @ n), abs(v @ n)) > 1e-6:
            raise ValueError("frame axes are not orthogonal")
        if np.linalg.norm(np.cross(v, n) - u) > 1e-6:
            raise ValueError("frame is not right-handed (u != v x n)")


@dataclass(frozen=True, eq=False)
class Patch:
    frame: PatchFrame
    indices: np.ndarray  # member indices into the source cloud

    @property
    def empty(self):
        return self.indices.size == 0


def estimate_normals(down, ball_radius):
    """PCA normals on a (downsampled) cloud via ball-radius neighbourhoods.

    For every point with at least 3 neighbours (itself included) within
    ball_radius, returns (center, normal) where normal is the unit eigenvector
    of the neighbourhood covariance with the smallest eigenvalue. Points with
    fewer neighbours are dropped silently; the caller can compare counts.
    """
    if len(down) == 0:
        raise ValueError("cannot estimate normals on an empty cloud")
    pts = down.points
    tree = cKDTree(pts)
    neighbourhoods = tree.query_ball_point(pts, ball_radius)
    out = []
    for i, idx in enumerate(neighbourhoods):
        if len(idx) < 3:
            continue
        nb = pts[idx]
        centered = nb - nb.mean(axis=0)
        cov = centered.T @ centered / len(idx)
        w, vecs = np.linalg.eigh(cov)
        out.append((pts[i].copy(), vecs[:, 0]))
    return out


def orient_normal(candidate, cloud, d):
    """Flip a PCA normal so the camera side (center + d*n) is the freer one.

    Counts cloud points inside balls of radius d at center + d*n and
    center - d*n; returns the sign whose ball holds no more points than the
    other. Ties keep the PCA sign.
    """
    center, normal = candidate
    center = np.asarray(center, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    tree = cKDTree(cloud.points)
    plus = len(tree.query_ball_point(center + d * normal, d))
    minus = len(tree.query_ball_point(center - d * normal, d))
    return normal if plus <= minus else -normal


_FALLBACK_AXIS = np.array([1.0, 0.0, 0.0])


def build_frame(center, normal, up_hint=(0.0, 0.0, 1.0)) -> PatchFrame:
    """Complete a unit normal to a right-handed orthonormal frame.

    The generatrix v is the up_hint projected off n; if the projection is
    degenerate (|residual| < 1e-3) the fallback axis (1, 0, 0) replaces the
    hint. u = v x n.
    """
    center = np.asarray(center, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    hint = np.asarray(up_hint, dtype=np.float64)
    v = hint - (hint @ n) * n
    if np.linalg.norm(v) < 1e-3:
        v = _FALLBACK_AXIS - (_FALLBACK_AXIS @ n) * n
        assert np.linalg.norm(v) >= 1e-3, "normal parallel to both up hint and fallback axis"
    v = v / np.linalg.norm(v)
    u = np.cross(v, n)
    u = u / np.linalg.norm(u)
    return PatchFrame(center=center, normal=n, tangent=u, generatrix=v)


def crop_patch(cloud, frame: PatchFrame, params: CropParams) -> Patch:
    """Select cloud points inside the oriented box of the frame (boundaries closed).

    Membership: |(x - c).u| <= s/2, |(x - c).v| <= s/2 and |(x - c).n| <= t.
    An empty patch is returned as-is; callers may skip it.
    """
    rel = cloud.points - frame.center
    half = params.side / 2.0
    inside = (
        (np.abs(rel @ frame.tangent) <= half)
        & (np.abs(rel @ frame.generatrix) <= half)
        & (np.abs(rel @ frame.normal) <= params.half_thickness)
    )
    return Patch(frame=frame, indices=np.flatnonzero(inside))


def sample_patches(candidates, k, seed):
    """Uniform random subset of k candidate frames, deterministic per seed.

    Returned in original candidate order.
    """
    if k > len(candidates):
        raise ValueError(f"cannot sample {k} from {len(candidates)} candidates")
    rng = np.random.Generator(np.random.Philox(seed))
    chosen = np.sort(rng.choice(len(candidates), size=k, replace=False))
    return [candidates[i] for i in chosen]
