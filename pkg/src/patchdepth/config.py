"""Run configuration: dataclass sections, INI-style file parsing, overrides.

Defaults follow the reference parameter table: patch side 0.8 m, half
thickness 0.25 m, stand-off 0.8 m, 400 px focal lengths, 256x256 images with
the principal point at (128, 128), a 1000-step linear beta schedule from 1e-4
to 0.02 sampled at 100 sub-steps, and observation noise 0.16.

Precedence: built-in defaults < config file < explicit CLI flags.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from patchdepth.camera import CameraIntrinsics
from patchdepth.diffusion import DiffusionSchedule, build_schedule
from patchdepth.patches import CropParams


@dataclass(frozen=True)
class PatchConfig:
    s: float = 0.8
    t: float = 0.25
    voxel_size: float = 0.2
    ball_radius: float = 0.4

    def crop_params(self) -> CropParams:
        return CropParams(side=self.s, half_thickness=self.t, ball_radius=self.ball_radius)


@dataclass(frozen=True)
class CameraConfig:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 128.0
    cy: float = 128.0
    H: int = 256
    W: int = 256
    d: float = 0.8

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                                height=self.H, width=self.W, d=self.d)


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    K: int = 100
    eta: float = 0.85
    seed: int = 0

    def schedule(self) -> DiffusionSchedule:
        return build_schedule(T=self.T, beta_start=self.beta_start, beta_end=self.beta_end,
                              K=self.K, eta=self.eta)


@dataclass(frozen=True)
class RestoreConfig:
    sigma_y: float = 0.16
    mode: str = "masked"  # masked | vanilla


@dataclass(frozen=True)
class DenoiserConfig:
    kind: str = "zero"  # zero | gaussian | remote
    endpoint: str = ""


_SECTIONS = {
    "patch": PatchConfig,
    "camera": CameraConfig,
    "diffusion": DiffusionConfig,
    "restore": RestoreConfig,
    "denoiser": DenoiserConfig,
}


@dataclass(frozen=True)
class RunConfig:
    patch: PatchConfig = field(default_factory=PatchConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    restore: RestoreConfig = field(default_factory=RestoreConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        sections = {}
        for name, klass in _SECTIONS.items():
            if not parser.has_section(name):
                sections[name] = klass()
                continue
            kwargs = {}
            for f in fields(klass):
                if parser.has_option(name, f.name):
                    kwargs[f.name] = _convert(klass, f.name, parser.get(name, f.name))
            unknown = set(parser.options(name)) - {f.name.lower() for f in fields(klass)}
            if unknown:
                raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
            sections[name] = klass(**kwargs)
        unknown_sections = set(parser.sections()) - set(_SECTIONS)
        if unknown_sections:
            raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")
        return cls(**sections)

    def override(self, section: str, **kwargs) -> "RunConfig":
        """New config with some fields of one section replaced."""
        current = getattr(self, section)
        return replace(self, **{section: replace(current, **kwargs)})

    def to_text(self) -> str:
        out = io.StringIO()
        for name, value in (("patch", self.patch), ("camera", self.camera),
                            ("diffusion", self.diffusion), ("restore", self.restore),
                            ("denoiser", self.denoiser)):
            out.write(f"[{name}]\n")
            for f in fields(value):
                out.write(f"{f.name} = {getattr(value, f.name)}\n")
            out.write("\n")
        return out.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _convert(klass, name, raw):
    for f in fields(klass):
        if f.name == name:
            if f.type in ("int", int):
                return int(raw)
            if f.type in ("float", float):
                return float(raw)
            return raw
    raise KeyError(name)
