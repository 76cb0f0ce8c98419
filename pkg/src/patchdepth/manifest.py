"""Line-delimited key=value records tying pipeline stages together.

One record per line, fields space-separated as key=value, keys in insertion
order. Floats are written with repr() so reloading is bit-exact; a manifest
rewritten from parsed records reproduces identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from patchdepth.camera import CameraIntrinsics
from patchdepth.patches import PatchFrame


def format_record(record: dict) -> str:
    parts = []
    for key, value in record.items():
        if isinstance(value, (float, np.floating)):
            text = repr(float(value))
        else:
            text = str(value)
        if " " in text or "=" in text:
            raise ValueError(f"record value for {key!r} contains separators: {text!r}")
        parts.append(f"{key}={text}")
    return " ".join(parts)


def parse_record(line: str) -> dict:
    out = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed manifest token {token!r}")
        out[key] = value
    return out


def write_manifest(path, records) -> None:
    Path(path).write_text("".join(format_record(r) + "\n" for r in records))


def read_manifest(path):
    return [parse_record(line) for line in Path(path).read_text().splitlines() if line.strip()]


def frame_record(frame: PatchFrame) -> dict:
    c, n, u, v = frame.center, frame.normal, frame.tangent, frame.generatrix
    return {
        "cx": c[0], "cy": c[1], "cz": c[2],
        "nx": n[0], "ny": n[1], "nz": n[2],
        "ux": u[0], "uy": u[1], "uz": u[2],
        "vx": v[0], "vy": v[1], "vz": v[2],
    }


def frame_from_record(rec: dict) -> PatchFrame:
    take = lambda *keys: np.array([float(rec[k]) for k in keys])
    return PatchFrame(
        center=take("cx", "cy", "cz"),
        normal=take("nx", "ny", "nz"),
        tangent=take("ux", "uy", "uz"),
        generatrix=take("vx", "vy", "vz"),
    )


def intrinsics_record(intr: CameraIntrinsics) -> dict:
    return {
        "fx": intr.fx, "fy": intr.fy, "px": intr.cx, "py": intr.cy,
        "H": intr.height, "W": intr.width, "d": intr.d,
    }


def intrinsics_from_record(rec: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(rec["fx"]), fy=float(rec["fy"]),
        cx=float(rec["px"]), cy=float(rec["py"]),
        height=int(rec["H"]), width=int(rec["W"]), d=float(rec["d"]),
    )
