"""Dataclass configuration for scenarios, sensors, estimator and solver.

A scenario is stored as a single JSON document with the sections
``trajectory``, ``imu``, ``camera``, ``estimator``, ``models``, ``runs`` and
``seed``.  Unknown keys anywhere raise :class:`ConfigError`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


MODEL_NAMES = ("m1", "m2", "discrete")


@dataclass
class ImuNoiseSpec:
    """Continuous-time IMU noise densities and initial biases.

    Attributes:
        sigma_g: gyro white noise, rad/s/sqrt(Hz).
        sigma_a: accelerometer white noise, m/s^2/sqrt(Hz).
        sigma_wg: gyro bias random walk, rad/s^2/sqrt(Hz).
        sigma_wa: accelerometer bias random walk, m/s^3/sqrt(Hz).
    """

    sigma_g: float = 1.6968e-4
    sigma_a: float = 2.0e-3
    sigma_wg: float = 1.9393e-5
    sigma_wa: float = 3.0e-3
    bg0: tuple = (0.0, 0.0, 0.0)
    ba0: tuple = (0.0, 0.0, 0.0)

    def validate(self):
        for name in ("sigma_g", "sigma_a", "sigma_wg", "sigma_wa"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ConfigError(f"{name} must be a non-negative number, got {v}")
        for name in ("bg0", "ba0"):
            if len(getattr(self, name)) != 3:
                raise ConfigError(f"{name} must have 3 entries")
        return self

    @property
    def qc(self):
        """Diagonal of the continuous noise covariance, ``[g, wg, a, wa]``."""
        return np.array(
            [self.sigma_g**2, self.sigma_wg**2, self.sigma_a**2, self.sigma_wa**2]
        )

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass
class TrajectoryConfig:
    """Circle-sinusoid trajectory parameters."""

    radius: float = 5.0
    rate: float = 0.8
    z_amplitude: float = 1.0
    z_frequency: float = 1.0
    roll_amplitude: float = 0.1
    roll_frequency: float = 0.5
    pitch_amplitude: float = 0.1
    pitch_frequency: float = 0.3
    duration: float = 60.0

    def validate(self):
        if self.duration <= 0:
            raise ConfigError("trajectory.duration must be positive")
        if self.radius < 0:
            raise ConfigError("trajectory.radius must be non-negative")
        return self


@dataclass
class ImuConfig:
    rate: float = 100.0
    noise: ImuNoiseSpec = field(default_factory=ImuNoiseSpec)
    gravity: float = 9.81

    def validate(self):
        if self.rate <= 0:
            raise ConfigError("imu.rate must be positive")
        self.noise.validate()
        return self


@dataclass
class CameraConfig:
    rate: float = 10.0
    features: int = 80
    pixel_sigma: float = 1.0
    focal: float = 450.0
    width: int = 752
    height: int = 480
    baseline: float = 0.11
    min_depth: float = 2.0
    max_depth: float = 15.0
    world_seed: int = 7
    rel_pose_sigma_theta: float = 1e-3
    rel_pose_sigma_p: float = 5e-3

    def validate(self):
        if self.rate <= 0 or self.features <= 0 or self.focal <= 0:
            raise ConfigError("camera rate, features and focal must be positive")
        if self.pixel_sigma < 0:
            raise ConfigError("camera.pixel_sigma must be non-negative")
        if not 0 < self.min_depth < self.max_depth:
            raise ConfigError("camera depth shell must satisfy 0 < min < max")
        return self


@dataclass
class SolverConfig:
    """Levenberg-Marquardt settings.

    ``robust`` maps a factor class name (``"visual"``, ``"relpose"``) to
    ``(kind, k)``.
    """

    max_iterations: int = 10
    cost_tol: float = 1e-10
    step_tol: float = 1e-10
    grad_tol: float = 1e-9
    lambda0: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    lambda_max: float = 1e10
    gauss_newton: bool = False
    robust: dict = field(default_factory=dict)

    def validate(self):
        if self.max_iterations <= 0:
            raise ConfigError("max_iterations must be positive")
        for name in ("cost_tol", "step_tol", "grad_tol", "lambda0"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.lambda_up <= 1 or not 0 < self.lambda_down < 1:
            raise ConfigError("lambda_up must exceed 1 and lambda_down lie in (0, 1)")
        return self


@dataclass
class EstimatorConfig:
    inertial_window: int = 6
    pose_window: int = 8
    max_iterations: int = 4
    init_sigma_theta: float = 1e-3
    init_sigma_bg: float = 1e-3
    init_sigma_v: float = 1e-2
    init_sigma_ba: float = 1e-2
    init_sigma_p: float = 1e-3
    inject_init_noise: bool = True
    robust: str = "none"
    robust_k: float = 1.345
    divergence_m: float = 50.0

    def validate(self):
        if self.inertial_window < 2 or self.pose_window < 1:
            raise ConfigError("need inertial_window >= 2 and pose_window >= 1")
        if self.robust not in ("none", "huber", "cauchy"):
            raise ConfigError(f"unknown robust kind {self.robust!r}")
        return self

    @property
    def init_sigmas(self):
        return np.repeat(
            [
                self.init_sigma_theta,
                self.init_sigma_bg,
                self.init_sigma_v,
                self.init_sigma_ba,
                self.init_sigma_p,
            ],
            3,
        )


@dataclass
class ScenarioConfig:
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    models: tuple = MODEL_NAMES
    runs: int = 1
    seed: int = 0
    mode: str = "tightly-coupled"

    def validate(self):
        self.trajectory.validate()
        self.imu.validate()
        self.camera.validate()
        self.estimator.validate()
        if not self.models:
            raise ConfigError("at least one model is required")
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ConfigError(f"unknown model {m!r}; choose from {MODEL_NAMES}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.mode not in ("tightly-coupled", "loosely-coupled"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        return self

    def to_dict(self):
        d = asdict(self)
        d["models"] = list(self.models)
        for key in ("bg0", "ba0"):
            d["imu"]["noise"][key] = list(d["imu"]["noise"][key])
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config root must be a JSON object")
        sub = {
            "trajectory": TrajectoryConfig,
            "camera": CameraConfig,
            "estimator": EstimatorConfig,
        }
        kwargs = {}
        for key, value in d.items():
            if key in sub:
                kwargs[key] = _build(sub[key], value, key)
            elif key == "imu":
                value = dict(_require_dict(value, key))
                noise = value.pop("noise", {})
                imu = _build(ImuConfig, value, key)
                imu.noise = _build(ImuNoiseSpec, noise, "imu.noise")
                for b in ("bg0", "ba0"):
                    setattr(imu.noise, b, tuple(float(x) for x in getattr(imu.noise, b)))
                kwargs[key] = imu
            elif key == "models":
                if isinstance(value, str):
                    value = value.split(",")
                kwargs[key] = tuple(str(m).strip().lower() for m in value)
            elif key in ("runs", "seed"):
                kwargs[key] = _as_int(value, key)
            elif key == "mode":
                kwargs[key] = str(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(data)


def _require_dict(value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"section {where!r} must be an object")
    return value


def _as_int(value, where):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{where} must be an integer")
    return int(value)


def _build(cls, value, where):
    value = _require_dict(value, where)
    names = {f.name: f for f in fields(cls)}
    for key in value:
        if key not in names:
            raise ConfigError(f"unknown key {where}.{key}")
    try:
        return cls(**value)
    except TypeError as exc:
        raise ConfigError(f"bad section {where}: {exc}") from exc
