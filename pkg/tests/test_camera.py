import numpy as np
import pytest

from patchdepth.camera import (
    CameraIntrinsics,
    EmptyProjectionError,
    back_project,
    boundary_mask,
    camera_pose,
    normalize_depth,
    project,
    world_to_camera,
)
from patchdepth.patches import build_frame


@pytest.fixture
def frame():
    return build_frame((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))


@pytest.fixture
def intr():
    return CameraIntrinsics()


def test_camera_pose_origin_and_axes(frame):
    origin, rotation = camera_pose(frame, 0.8)
    assert np.allclose(origin, [0, 0, 0.8])
    # rows are (u, -v, -n)
    assert np.allclose(rotation, [frame.tangent, -frame.generatrix, -frame.normal])


def test_center_maps_to_standoff_depth(frame, intr):
    cam = world_to_camera([frame.center], frame, intr.d)
    assert np.allclose(cam, [[0, 0, 0.8]])


def test_tangent_offset_maps_to_camera_x(frame, intr):
    cam = world_to_camera([frame.center + 0.1 * frame.tangent], frame, intr.d)
    assert np.allclose(cam, [[0.1, 0, 0.8]], atol=1e-12)


def test_project_principal_point(frame, intr):
    img = project(np.array([[0.0, 0.0, 0.8]]), frame, intr)
    assert img.valid[128, 128]
    assert img.values[128, 128] == 0.8
    assert img.valid.sum() == 1


def test_project_formula_hand_case(frame, intr):
    # u = 400 * 0.1 / 0.8 + 128 = 178, v = 128
    img = project(np.array([[0.1, 0.0, 0.8]]), frame, intr)
    assert img.valid[128, 178]


def test_project_zbuffer_keeps_min(frame, intr):
    img = project(np.array([[0.0, 0.0, 0.8], [0.0, 0.0, 0.9]]), frame, intr)
    assert img.values[128, 128] == 0.8


def test_project_discards_behind_camera_and_out_of_view(frame, intr):
    pts = np.array([
        [0.0, 0.0, -0.5],   # behind pinhole
        [0.0, 0.0, 1e-9],   # at the pinhole
        [10.0, 0.0, 0.8],   # far outside the image
        [0.0, 0.0, 0.8],    # the only survivor
    ])
    img = project(pts, frame, intr)
    assert img.valid.sum() == 1
    with pytest.raises(EmptyProjectionError):
        project(pts[:3], frame, intr)


def test_project_rounding_half_away_from_zero(frame):
    intr = CameraIntrinsics(fx=400, fy=400, cx=10.5, cy=10.5, height=32, width=32)
    img = project(np.array([[0.0, 0.0, 0.8]]), frame, intr)
    assert img.valid[11, 11]  # 10.5 rounds to 11, not banker's 10


def test_boundary_mask_single_pixel(frame, intr):
    img = project(np.array([[(10 - 128) * 0.8 / 400, (20 - 128) * 0.8 / 400, 0.8]]), frame, intr)
    bm = boundary_mask(img)
    assert bm.rect == (10, 20, 10, 20)
    assert bm.grid.sum() == 1 and bm.grid[20, 10]


def test_boundary_mask_hand_case(frame, intr):
    def pt(u, v):
        return [(u - 128) * 0.8 / 400, (v - 128) * 0.8 / 400, 0.8]

    img = project(np.array([pt(5, 5), pt(5, 9), pt(8, 7)]), frame, intr)
    bm = boundary_mask(img)
    assert bm.rect == (5, 5, 8, 9)
    assert bm.grid.sum() == 4 * 5
    # tightness: every edge touches a valid pixel
    u0, v0, u1, v1 = bm.rect
    assert img.valid[v0:v1 + 1, u0].any() and img.valid[v0:v1 + 1, u1].any()
    assert img.valid[v0, u0:u1 + 1].any() and img.valid[v1, u0:u1 + 1].any()


def test_boundary_mask_full_image(frame, intr):
    def pt(u, v):
        return [(u - 128) * 0.8 / 400, (v - 128) * 0.8 / 400, 0.8]

    img = project(np.array([pt(0, 0), pt(255, 255)]), frame, intr)
    assert boundary_mask(img).grid.all()


def test_normalize_endpoints(frame, intr):
    img = project(np.array([[0.0, 0.0, 0.7], [0.05, 0.0, 0.9]]), frame, intr)
    norm = normalize_depth(img)
    vals = sorted(norm.values[norm.valid])
    assert vals == [0.0, 1.0]
    assert (norm.z_min, norm.z_max) == (0.7, 0.9)


def test_normalize_degenerate_range(frame, intr):
    img = project(np.array([[0.0, 0.0, 0.8], [0.05, 0.0, 0.8]]), frame, intr)
    norm = normalize_depth(img)
    assert (norm.values[norm.valid] == 0.5).all()
    assert (norm.values[~norm.valid] == 0.0).all()


def test_normalize_linear_map(frame, intr):
    img = project(np.array([[0.0, 0.0, 0.7], [0.05, 0.0, 0.8], [-0.05, 0.0, 0.9]]), frame, intr)
    norm = normalize_depth(img)
    assert np.allclose(sorted(norm.values[norm.valid]), [0.0, 0.5, 1.0], atol=1e-12)


def test_back_project_on_axis(frame, intr):
    img = project(np.array([[0.0, 0.0, 0.8]]), frame, intr)
    cloud = back_project(img)
    assert np.allclose(cloud.points, [[0, 0, 0]], atol=1e-12)


def test_back_project_reprojects_identically(frame, intr, rng):
    pts = np.column_stack([
        rng.uniform(-0.2, 0.2, 500), rng.uniform(-0.2, 0.2, 500), rng.uniform(0.6, 1.0, 500),
    ])
    img = project(pts, frame, intr)
    norm = normalize_depth(img)
    again = project(world_to_camera(back_project(norm).points, frame, intr.d), frame, intr)
    assert np.array_equal(again.valid, img.valid)
    assert np.abs(again.values[img.valid] - img.values[img.valid]).max() <= 1e-6


def test_back_project_plane_quantisation_bound(rng):
    # tilted plane: back-projected points stay within d/f * 0.5 of the plane
    normal = np.array([0.15, -0.1, 1.0])
    normal /= np.linalg.norm(normal)
    frame = build_frame((0.0, 0.0, 0.0), normal)
    intr = CameraIntrinsics()
    a = rng.uniform(-0.35, 0.35, 3000)
    b = rng.uniform(-0.35, 0.35, 3000)
    pts = frame.center + a[:, None] * frame.tangent + b[:, None] * frame.generatrix
    img = project(world_to_camera(pts, frame, intr.d), frame, intr)
    back = back_project(img)
    dist = np.abs((back.points - frame.center) @ normal)
    assert dist.max() <= intr.d / intr.fx * 0.5 + 1e-12


def test_translation_along_normal_shifts_depth_exactly(frame, intr, rng):
    pts = np.column_stack([rng.uniform(-0.3, 0.3, 200), rng.uniform(-0.3, 0.3, 200), np.zeros(200)])
    delta = 0.07
    cam0 = world_to_camera(pts, frame, intr.d)
    cam1 = world_to_camera(pts + delta * frame.normal, frame, intr.d)
    assert np.abs((cam0[:, 2] - cam1[:, 2]) - delta).max() <= 1e-9


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0)
    with pytest.raises(ValueError):
        CameraIntrinsics(cx=500)
