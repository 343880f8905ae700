"""Scenario configuration: TOML files, validation and presets.

A config file has the sections ``geometry``, ``trajectory``, ``rotation``,
``scene``, ``pulse``, ``noise``, ``estimation``, ``imaging`` and ``output``
plus a top-level ``seed``.  Every key is optional and falls back to the
desk-scale default; unknown keys are rejected.  Units are SI (m, s, Hz,
rad, rad/s).
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import ArrayLayout, RotationParams, Scene, Trajectory
from .waveform import Pulse, Scenario

PRESETS = ("desk", "paper_full")
IMAGE_KINDS = ("single-point", "rank-1", "kirchhoff")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class GeometryConfig:
    emitter: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    receivers: list | None = None
    receiver_count: int = 7
    receiver_seed: int = 0
    area: float = 200e3
    receiver_height: float = 15e3


@dataclass
class TrajectoryConfig:
    position: list = field(default_factory=lambda: [0.0, 0.0, 500e3])
    velocity: list = field(default_factory=lambda: [7600.0, 0.0, 0.0])


@dataclass
class RotationConfig:
    theta: float = 3 * math.pi / 4
    phi: float = math.pi / 3
    omega: float = 2 * math.pi / 5
    axis_offset: list | None = None


@dataclass
class SceneConfig:
    offsets: list = field(default_factory=lambda: [
        [0.0, 0.6], [0.0, -0.6], [0.24, 0.24], [0.24, -0.24], [-0.24, 0.24], [-0.24, -0.24]])
    reflectivities: list | None = None


@dataclass
class PulseConfig:
    carrier: float = 2.4e9
    bandwidth: float = 311e6
    spacing: float = 0.015
    num_freqs: int = 64
    truncation: float = 1.5
    sample_rate: float = 8e9
    amplitude: str = "common"


@dataclass
class NoiseConfig:
    snr_db: float | str = "off"
    seed: int | None = None


@dataclass
class EstimationConfig:
    enabled: bool = True
    num_pulses: int = 1500
    alpha: float = 0.001
    window: int = 100
    theta_steps: int = 64
    phi_steps: int = 128
    omega_steps: int = 9
    omega_span: float = 0.2
    record: float = 32e-9
    max_lag: float | None = None
    decimation: int = 1


@dataclass
class ImagingConfig:
    enabled: bool = True
    num_pulses: int = 400
    grid_size: int = 32
    grid_spacing: float | None = None
    spacing_wavelengths: float = 1 / 3
    images: list = field(default_factory=lambda: list(IMAGE_KINDS))
    eigenvalues: int = 10
    peak_threshold: float = 0.5
    # relative error injected into (theta, phi, omega) before migration
    rotation_error: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    compensate_rotation: bool = True


@dataclass
class OutputConfig:
    directory: str = "out"
    plots: bool = True


@dataclass
class ScenarioConfig:
    seed: int = 0
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    rotation: RotationConfig = field(default_factory=RotationConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # ---- derived objects -------------------------------------------------
    @property
    def snr_db(self) -> float | None:
        v = self.noise.snr_db
        return None if isinstance(v, str) else float(v)

    @property
    def noise_seed(self) -> int:
        return self.seed + 1000 if self.noise.seed is None else self.noise.seed

    def layout(self) -> ArrayLayout:
        g = self.geometry
        if g.receivers is not None:
            return ArrayLayout(np.asarray(g.emitter, float), np.asarray(g.receivers, float),
                               g.area)
        return ArrayLayout.random(g.receiver_count, g.area, g.receiver_height,
                                  g.receiver_seed, g.emitter)

    def trajectory_obj(self) -> Trajectory:
        return Trajectory(self.trajectory.position, self.trajectory.velocity)

    def rotation_truth(self) -> RotationParams:
        r = self.rotation
        return RotationParams(r.theta, r.phi, r.omega)

    def scene_obj(self) -> Scene:
        return Scene(self.scene.offsets, self.scene.reflectivities)

    def pulse_obj(self, num_pulses: int, time_domain: bool = False) -> Pulse:
        p = self.pulse
        return Pulse(p.carrier, p.bandwidth, p.spacing, num_pulses,
                     p.sample_rate if time_domain else None,
                     self.estimation.record if time_domain else None,
                     p.num_freqs, p.truncation)

    def scenario(self, num_pulses: int, time_domain: bool = False) -> Scenario:
        r = self.rotation
        return Scenario(self.layout(), self.trajectory_obj(), self.rotation_truth(),
                        self.pulse_obj(num_pulses, time_domain),
                        None if r.axis_offset is None else np.asarray(r.axis_offset, float),
                        self.pulse.amplitude)

    def grid_spacing(self) -> float:
        im = self.imaging
        if im.grid_spacing is not None:
            return im.grid_spacing
        return im.spacing_wavelengths * 299_792_458.0 / self.pulse.carrier

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``{"rotation.theta": 2.0}``."""
        data = self.to_dict()
        for path, value in changes.items():
            *head, last = path.split(".")
            node = data
            for key in head:
                node = node[key]
            if last not in node:
                raise ConfigError(f"unknown field '{path}'")
            node[last] = value
        return from_dict(data)


SECTIONS = {f.name: f.default_factory for f in fields(ScenarioConfig) if f.name != "seed"}


def _check_type(path, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")


def _section(name, raw) -> object:
    cls_factory = SECTIONS[name]
    base = cls_factory()
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(base)}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
        default = getattr(base, key)
        if default is not None:
            _check_type(f"{name}.{key}", value, default)
        if isinstance(default, float) and isinstance(value, int):
            value = float(value)
        setattr(base, key, value)
    return base


def from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a config from plain data (parsed TOML)."""
    data = dict(data)
    seed = data.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    kwargs = {}
    for key, raw in data.items():
        if key not in SECTIONS:
            raise ConfigError(f"{key}: unknown section")
        kwargs[key] = _section(key, raw)
    cfg = ScenarioConfig(seed=seed, **kwargs)
    validate(cfg)
    return cfg


def _vec3(path, v):
    if not (isinstance(v, (list, tuple)) and len(v) == 3
            and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
        raise ConfigError(f"{path}: expected a list of three numbers")


def _positive(path, v):
    if not v > 0:
        raise ConfigError(f"{path}: must be positive, got {v!r}")


def validate(cfg: ScenarioConfig) -> None:
    g = cfg.geometry
    _vec3("geometry.emitter", g.emitter)
    if g.receivers is not None:
        if not isinstance(g.receivers, list) or len(g.receivers) < 2:
            raise ConfigError("geometry.receivers: need a list of at least two positions")
        for i, r in enumerate(g.receivers):
            _vec3(f"geometry.receivers[{i}]", r)
        if len({float(r[2]) for r in g.receivers}) != 1:
            raise ConfigError("geometry.receivers: all receivers must share one height")
    elif g.receiver_count < 2:
        raise ConfigError("geometry.receiver_count: need at least two receivers")
    _positive("geometry.area", g.area)
    _vec3("trajectory.position", cfg.trajectory.position)
    _vec3("trajectory.velocity", cfg.trajectory.velocity)
    r = cfg.rotation
    if not 0.0 <= r.theta <= math.pi:
        raise ConfigError(f"rotation.theta: {r.theta} outside [0, pi]")
    if not 0.0 <= r.phi < 2 * math.pi:
        raise ConfigError(f"rotation.phi: {r.phi} outside [0, 2pi)")
    if r.omega < 0:
        raise ConfigError(f"rotation.omega: {r.omega} must be >= 0")
    if r.axis_offset is not None:
        _vec3("rotation.axis_offset", r.axis_offset)
    try:
        cfg.scene_obj()
    except ValueError as exc:
        raise ConfigError(f"scene: {exc}") from None
    p = cfg.pulse
    for name in ("carrier", "bandwidth", "spacing", "truncation", "sample_rate"):
        _positive(f"pulse.{name}", getattr(p, name))
    _positive("pulse.num_freqs", p.num_freqs)
    if p.amplitude not in ("common", "receiver"):
        raise ConfigError("pulse.amplitude: expected 'common' or 'receiver'")
    if p.sample_rate < 2 * (p.carrier + 3 * p.bandwidth):
        raise ConfigError("pulse.sample_rate: below 2 (carrier + 3 bandwidth)")
    snr = cfg.noise.snr_db
    if isinstance(snr, str):
        if snr != "off":
            raise ConfigError("noise.snr_db: expected a number or \"off\"")
    elif not isinstance(snr, (int, float)) or isinstance(snr, bool):
        raise ConfigError("noise.snr_db: expected a number or \"off\"")
    e = cfg.estimation
    if not 0.0 < e.alpha < 1.0:
        raise ConfigError(f"estimation.alpha: {e.alpha} outside (0, 1)")
    for name in ("num_pulses", "window", "theta_steps", "phi_steps", "omega_steps",
                 "decimation"):
        _positive(f"estimation.{name}", getattr(e, name))
    _positive("estimation.record", e.record)
    if e.max_lag is not None:
        _positive("estimation.max_lag", e.max_lag)
    im = cfg.imaging
    _positive("imaging.num_pulses", im.num_pulses)
    _positive("imaging.grid_size", im.grid_size)
    if im.grid_spacing is not None:
        _positive("imaging.grid_spacing", im.grid_spacing)
    _positive("imaging.spacing_wavelengths", im.spacing_wavelengths)
    for kind in im.images:
        if kind not in IMAGE_KINDS:
            raise ConfigError(f"imaging.images: unknown image kind {kind!r}")
    if not (isinstance(im.rotation_error, list) and len(im.rotation_error) == 3 and all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in im.rotation_error)):
        raise ConfigError("imaging.rotation_error: expected three relative errors")
    if not 0 <= im.peak_threshold <= 1:
        raise ConfigError("imaging.peak_threshold: must lie in [0, 1]")
    if not 0 < im.eigenvalues <= im.grid_size ** 2:
        raise ConfigError("imaging.eigenvalues: must lie in [1, grid_size^2]")


def loads(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return from_dict(data)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    return loads(path.read_text(), str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("rotisar.presets").joinpath(f"{name}.toml").read_text()


def load_preset(name: str) -> ScenarioConfig:
    return loads(preset_text(name), f"preset {name}")


def dumps(cfg: ScenarioConfig) -> str:
    """Serialize to TOML text that :func:`loads` reads back unchanged."""
    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        raise TypeError(type(v))

    lines = [f"seed = {cfg.seed}", ""]
    for name in SECTIONS:
        lines.append(f"[{name}]")
        for key, value in dataclasses.asdict(getattr(cfg, name)).items():
            if value is not None:
                lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)
