"""Point cloud container, PLY I/O and voxel-grid downsampling.

Supported PLY subset: formats "ascii 1.0" and "binary_little_endian 1.0",
element "vertex" with float32/float64 x, y, z. Unknown scalar properties are
skipped; an optional float property named "intensity" is preserved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_FLOAT_TYPES = {"float", "float32", "double", "float64"}


class PlyParseError(ValueError):
    """Malformed or truncated PLY input. Carries the byte offset of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class VoxelGridParams:
    """Voxel edge length in metres for grid downsampling."""

    voxel_size: float = 0.2

    def __post_init__(self):
        if not (self.voxel_size > 0):
            raise ValueError(f"voxel_size must be > 0, got {self.voxel_size}")


class PointCloud:
    """Immutable set of 3D points in metres with optional per-point intensity."""

    def __init__(self, points, intensity=None):
        pts = np.array(points, dtype=np.float64)  # copy: clouds are immutable
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        self.points = pts
        self.points.setflags(write=False)
        if intensity is not None:
            inten = np.array(intensity, dtype=np.float64)
            if inten.shape != (pts.shape[0],):
                raise ValueError("intensity length must match point count")
            inten.setflags(write=False)
            self.intensity = inten
        else:
            self.intensity = None

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        if self.points.shape != other.points.shape:
            return False
        same_pts = np.array_equal(self.points, other.points)
        if self.intensity is None or other.intensity is None:
            return same_pts and (self.intensity is None) == (other.intensity is None)
        return same_pts and np.array_equal(self.intensity, other.intensity)


def _read_header(data):
    """Parse the PLY header; returns (fmt, elements, body_offset).

    elements is a list of (name, count, [(prop_name, prop_type), ...]).
    """
    offset = 0

    def next_line():
        nonlocal offset
        end = data.find(b"\n", offset)
        if end < 0:
            raise PlyParseError("unterminated header line", offset)
        line = data[offset:end].rstrip(b"\r")
        start = offset
        offset = end + 1
        return line, start

    line, at = next_line()
    if line != b"ply":
        raise PlyParseError("missing 'ply' magic", at)
    fmt = None
    elements = []
    while True:
        line, at = next_line()
        if not line or line.startswith(b"comment") or line.startswith(b"obj_info"):
            continue
        parts = line.split()
        if parts[0] == b"format":
            if len(parts) != 3 or parts[2] != b"1.0":
                raise PlyParseError("unsupported format line", at)
            fmt = parts[1].decode("ascii")
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported PLY format {fmt!r}", at)
        elif parts[0] == b"element":
            if len(parts) != 3:
                raise PlyParseError("malformed element line", at)
            try:
                count = int(parts[2])
            except ValueError:
                raise PlyParseError("non-integer element count", at) from None
            elements.append((parts[1].decode("ascii"), count, []))
        elif parts[0] == b"property":
            if not elements:
                raise PlyParseError("property before any element", at)
            if parts[1] == b"list":
                raise PlyParseError("list properties are not supported", at)
            if len(parts) != 3:
                raise PlyParseError("malformed property line", at)
            ptype = parts[1].decode("ascii")
            if ptype not in _PLY_SCALARS:
                raise PlyParseError(f"unknown property type {ptype!r}", at)
            elements[-1][2].append((parts[2].decode("ascii"), ptype))
        elif parts[0] == b"end_header":
            break
        else:
            raise PlyParseError(f"unexpected header keyword {parts[0]!r}", at)
    if fmt is None:
        raise PlyParseError("header missing format line", 0)
    return fmt, elements, offset


def parse_ply(data: bytes) -> PointCloud:
    """Parse a PLY byte stream into a PointCloud.

    Raises PlyParseError (with byte offset) on malformed headers, truncated
    payloads or non-float coordinate types.
    """
    fmt, elements, offset = _read_header(bytes(data))
    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise PlyParseError("no vertex element declared", 0)
    _, count, props = vertex
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise PlyParseError(f"vertex element lacks property {axis!r}", 0)
        if props[names.index(axis)][1] not in _FLOAT_TYPES:
            raise PlyParseError(f"coordinate {axis!r} has non-float type", 0)
    has_intensity = "intensity" in names and props[names.index("intensity")][1] in _FLOAT_TYPES

    if fmt == "ascii":
        rows, at = _read_ascii_rows(data, offset, elements, count)
        cols = {}
        for key in ("x", "y", "z") + (("intensity",) if has_intensity else ()):
            idx = names.index(key)
            try:
                cols[key] = np.array([float(r[idx]) for r in rows], dtype=np.float64)
            except ValueError:
                raise PlyParseError(f"non-numeric token in column {key!r}", at) from None
        pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1) if count else np.zeros((0, 3))
    else:
        dtype = np.dtype([(f"f{i}", "<" + _PLY_SCALARS[t]) for i, (_, t) in enumerate(props)])
        # skip any elements that precede vertex in the body
        for name, n, eprops in elements:
            if name == "vertex":
                break
            offset += n * sum(np.dtype(_PLY_SCALARS[t]).itemsize for _, t in eprops)
        need = count * dtype.itemsize
        if len(data) - offset < need:
            raise PlyParseError(
                f"truncated body: need {need} bytes for {count} vertices, have {len(data) - offset}",
                offset,
            )
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        pts = np.stack(
            [raw[f"f{names.index(a)}"].astype(np.float64) for a in ("x", "y", "z")], axis=1
        ) if count else np.zeros((0, 3))
        cols = {"intensity": raw[f"f{names.index('intensity')}"].astype(np.float64)} if has_intensity else {}

    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise PlyParseError(f"non-finite coordinates at vertex {int(np.argmax(bad))}", offset)
    return PointCloud(pts, cols.get("intensity") if has_intensity else None)


def _read_ascii_rows(data, offset, elements, vertex_count):
    """Collect whitespace-split vertex rows from an ascii body."""
    body = data[offset:]
    lines = body.split(b"\n")
    rows = []
    li = 0
    for name, n, props in elements:
        if name == "vertex":
            for _ in range(vertex_count):
                while li < len(lines) and not lines[li].strip():
                    li += 1
                if li >= len(lines):
                    raise PlyParseError(
                        f"truncated body: {len(rows)} of {vertex_count} vertices present", offset
                    )
                toks = lines[li].split()
                if len(toks) != len(props):
                    raise PlyParseError(
                        f"vertex row has {len(toks)} tokens, expected {len(props)}", offset
                    )
                rows.append(toks)
                li += 1
            break
        li += n  # skip non-vertex element rows
    return rows, offset


def write_ply(cloud: PointCloud, mode: str = "binary") -> bytes:
    """Serialise a cloud to PLY bytes; mode is "ascii" or "binary".

    Coordinates are written as float64, so binary write/parse round-trips
    bit-exactly.
    """
    if mode not in ("ascii", "binary"):
        raise ValueError(f"mode must be 'ascii' or 'binary', got {mode!r}")
    fmt = "ascii" if mode == "ascii" else "binary_little_endian"
    header = [
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if cloud.intensity is not None:
        header.append("property double intensity")
    header.append("end_header")
    out = ("\n".join(header) + "\n").encode("ascii")

    if mode == "ascii":
        lines = []
        for i in range(len(cloud)):
            vals = [repr(float(v)) for v in cloud.points[i]]
            if cloud.intensity is not None:
                vals.append(repr(float(cloud.intensity[i])))
            lines.append(" ".join(vals))
        return out + ("\n".join(lines) + ("\n" if lines else "")).encode("ascii")

    if cloud.intensity is not None:
        body = np.empty(len(cloud), dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"), ("intensity", "<f8")])
        body["intensity"] = cloud.intensity
    else:
        body = np.empty(len(cloud), dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
    body["x"], body["y"], body["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    return out + body.tobytes()


def voxel_downsample(cloud: PointCloud, params: VoxelGridParams) -> PointCloud:
    """Replace each occupied voxel by the centroid of its member points.

    The grid is anchored at the world origin: voxel index = floor(coord / size)
    per axis. Output is ordered by voxel index, so the result is deterministic
    and permutation-invariant up to float summation order.
    """
    if len(cloud) == 0:
        raise ValueError("cannot downsample an empty cloud")
    size = params.voxel_size
    idx = np.floor(cloud.points / size).astype(np.int64)
    # lexicographic unique over (ix, iy, iz)
    keys = idx.view([("x", "i8"), ("y", "i8"), ("z", "i8")]).ravel()
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    k = counts.size
    sums = np.zeros((k, 3))
    for a in range(3):
        sums[:, a] = np.bincount(inv, weights=cloud.points[:, a], minlength=k)
    centroids = sums / counts[:, None]
    inten = None
    if cloud.intensity is not None:
        inten = np.bincount(inv, weights=cloud.intensity, minlength=k) / counts
    return PointCloud(centroids, inten)
