import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from patchdepth.cloud import (
    PlyParseError,
    PointCloud,
    VoxelGridParams,
    parse_ply,
    voxel_downsample,
    write_ply,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_parse_ascii_single_vertex():
    data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n"
    cloud = parse_ply(data)
    assert len(cloud) == 1
    assert np.array_equal(cloud.points, [[0.0, 0.0, 0.0]])


def test_parse_binary_hand_built_bytes():
    # two float32 vertices laid out by hand from the IEEE-754 bit patterns
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
        b"property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    values = [1.5, -2.25, 0.1, 3.0, 1e-7, -0.0]
    body = b"".join(struct.pack("<f", v) for v in values)
    cloud = parse_ply(header + body)
    expected = np.array(values, dtype=np.float32).astype(np.float64).reshape(2, 3)
    assert np.array_equal(cloud.points, expected)


def test_parse_truncated_body_raises_with_offset():
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 3\n"
        b"property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    body = struct.pack("<6f", *range(6))  # only two of three vertices
    with pytest.raises(PlyParseError, match="truncated"):
        parse_ply(header + body)
    with pytest.raises(PlyParseError, match="byte offset"):
        parse_ply(header + body)


def test_parse_non_float_coordinate_rejected():
    data = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty float y\nproperty float z\nend_header\n0 0 0\n"
    with pytest.raises(PlyParseError, match="non-float"):
        parse_ply(data)


def test_parse_malformed_header():
    with pytest.raises(PlyParseError):
        parse_ply(b"not a ply at all")
    with pytest.raises(PlyParseError, match="format"):
        parse_ply(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")


def test_parse_skips_unknown_properties():
    data = (
        b"ply\nformat ascii 1.0\nelement vertex 2\n"
        b"property float x\nproperty float nx\nproperty float y\nproperty float z\nproperty uchar flag\n"
        b"end_header\n1 9 2 3 7\n4 9 5 6 7\n"
    )
    cloud = parse_ply(data)
    assert np.array_equal(cloud.points, [[1, 2, 3], [4, 5, 6]])


def test_write_empty_cloud_is_valid_ply():
    cloud = PointCloud(np.zeros((0, 3)))
    data = write_ply(cloud, "ascii")
    assert b"element vertex 0" in data
    assert parse_ply(data) == cloud


def test_single_point_round_trip():
    cloud = PointCloud([[1.25, -3.5, 0.001]])
    for mode in ("ascii", "binary"):
        assert parse_ply(write_ply(cloud, mode)) == cloud


def test_large_random_binary_round_trip_bit_exact(rng):
    pts = rng.standard_normal((10_000, 3)) * np.array([1e3, 1.0, 1e-4])
    cloud = PointCloud(pts, intensity=rng.random(10_000))
    back = parse_ply(write_ply(cloud, "binary"))
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.intensity, cloud.intensity)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=finite))
def test_binary_round_trip_property(pts):
    cloud = PointCloud(pts)
    assert parse_ply(write_ply(cloud, "binary")) == cloud


def test_nonfinite_coordinates_rejected():
    with pytest.raises(ValueError):
        PointCloud([[np.nan, 0, 0]])
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        b"property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with pytest.raises(PlyParseError, match="non-finite"):
        parse_ply(header + struct.pack("<3f", np.inf, 0, 0))


# ---------------------------------------------------------------- voxel grid

def test_voxel_single_point_identity():
    cloud = PointCloud([[0.05, 0.07, 0.01]])
    out = voxel_downsample(cloud, VoxelGridParams(0.2))
    assert np.allclose(out.points, cloud.points)


def test_voxel_centroid_of_shared_cell():
    cloud = PointCloud([[0, 0, 0], [0.1, 0, 0]])
    out = voxel_downsample(cloud, VoxelGridParams(0.2))
    assert out.points.shape == (1, 3)
    assert np.allclose(out.points[0], [0.05, 0, 0])


def test_voxel_distinct_cells_stay_distinct():
    cloud = PointCloud([[0, 0, 0], [0.3, 0, 0]])
    out = voxel_downsample(cloud, VoxelGridParams(0.2))
    assert out.points.shape == (2, 3)


def test_voxel_empty_cloud_errors():
    with pytest.raises(ValueError):
        voxel_downsample(PointCloud(np.zeros((0, 3))), VoxelGridParams(0.2))


def test_voxel_output_near_inputs_and_cells_match_bruteforce(rng):
    pts = rng.uniform(-1.0, 1.0, size=(500, 3))
    cloud = PointCloud(pts)
    size = 0.2
    out = voxel_downsample(cloud, VoxelGridParams(size))
    assert len(out) <= len(cloud)
    # every centroid lies within half the voxel diagonal of some input point
    for c in out.points:
        assert np.min(np.linalg.norm(pts - c, axis=1)) <= size * np.sqrt(3) / 2 + 1e-12
    # brute-force voxel membership: one output per occupied floor-index cell
    cells = {tuple(v) for v in np.floor(pts / size).astype(int)}
    assert len(out) == len(cells)
    out_cells = {tuple(v) for v in np.floor(out.points / size).astype(int)}
    assert out_cells <= cells  # centroids can only sit in occupied cells


def test_voxel_permutation_invariance(rng):
    pts = rng.uniform(-0.5, 0.5, size=(300, 3))
    perm = rng.permutation(300)
    a = voxel_downsample(PointCloud(pts), VoxelGridParams(0.2))
    b = voxel_downsample(PointCloud(pts[perm]), VoxelGridParams(0.2))
    assert a.points.shape == b.points.shape
    assert np.allclose(a.points, b.points, atol=1e-12)


def test_voxel_averages_intensity():
    cloud = PointCloud([[0, 0, 0], [0.1, 0, 0]], intensity=[1.0, 3.0])
    out = voxel_downsample(cloud, VoxelGridParams(0.2))
    assert np.allclose(out.intensity, [2.0])


def test_voxel_params_validation():
    with pytest.raises(ValueError):
        VoxelGridParams(0.0)
