"""Scenario configuration: JSON round-trip, validation and defaults.

A scenario document has exactly the top-level keys ``setup``, ``plant``,
``controller``, ``trajectory``, ``run``, ``measurement`` and ``output``; every
physical value is SI (m, kg, s, T, A, N, rad). Unknown keys anywhere are
rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .control import ControllerGains, SetupConfig, SetupKind
from .dynamics import MarbleParams
from .errors import ConfigError
from .magnetics import DEFAULT_COIL_GAIN, DEFAULT_R_MIN, HelmholtzCoil, MagnetSource
from . import trajectories

TOP_LEVEL_KEYS = ("setup", "plant", "controller", "trajectory", "run", "measurement", "output")

MODES = ("single", "two_fm", "carry")

# Lumped chi*V of the default marble, from `ferrosteer calibrate` on the
# setup-1 "eq15" scenario (peak coil current inside the 1.0-1.2 A band).
DEFAULT_CHIV = 1.15e-7

DEFAULT_GEOMETRY = {
    SetupKind.VARIABLE_CURRENT: ((-0.06, 0.3),),
    SetupKind.SINGLE_ROTATING: ((-0.06, 0.3),),
    SetupKind.DUAL_ROTATING: ((-0.06, 0.15), (0.06, 0.15)),
}
DEFAULT_FIXED_CURRENT = {
    SetupKind.VARIABLE_CURRENT: 0.0,
    SetupKind.SINGLE_ROTATING: 1.5,
    SetupKind.DUAL_ROTATING: 3.0,
}


def _from_mapping(cls, data: Any, where: str, **overrides):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    kwargs = dict(data)
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass
class MagnetSpec:
    x: float
    moment: float
    theta: float = 0.0

    def build(self) -> MagnetSource:
        return MagnetSource.on_axis(self.x, self.moment, self.theta)


@dataclass
class SetupSection:
    kind: int = 1
    magnets: list = field(default_factory=list)
    coil_gain: float = DEFAULT_COIL_GAIN
    current_limits: list = field(default_factory=lambda: [-5.0, 5.0])
    fixed_current: float = 0.0
    slew_rate: Optional[float] = math.pi
    include_pm_field: Optional[bool] = None
    r_min: float = DEFAULT_R_MIN
    cond_limit: float = 1e8

    def __post_init__(self):
        names = {"variable_current": 1, "single_rotating": 2, "dual_rotating": 3}
        if isinstance(self.kind, str):
            if self.kind not in names:
                raise ConfigError(f"unknown setup kind {self.kind!r}")
            self.kind = names[self.kind]
        if self.kind not in (1, 2, 3):
            raise ConfigError(f"setup kind must be 1, 2 or 3, got {self.kind!r}")
        self.magnets = [
            m if isinstance(m, MagnetSpec) else _from_mapping(MagnetSpec, m, "setup.magnets[]")
            for m in self.magnets
        ]
        if len(self.current_limits) != 2:
            raise ConfigError("setup.current_limits must be [I_min, I_max]")
        self.current_limits = [float(c) for c in self.current_limits]

    def build(self) -> SetupConfig:
        try:
            coil = HelmholtzCoil(self.coil_gain, tuple(self.current_limits))
            return SetupConfig(
                kind=SetupKind(self.kind),
                magnets=tuple(m.build() for m in self.magnets),
                coil=coil,
                fixed_current=self.fixed_current,
                slew_rate=self.slew_rate,
                include_pm_field=self.include_pm_field,
                r_min=self.r_min,
                cond_limit=self.cond_limit,
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"invalid setup: {exc}") from exc


@dataclass
class MarbleSpec:
    mass: float = 1.7e-5
    radius: float = 1.5e-3
    viscosity: float = 5.0e-3
    beta: float = 1.0
    chiV: float = DEFAULT_CHIV
    magnetic: bool = True
    x0: Optional[float] = None
    v0: float = 0.0

    def build(self) -> MarbleParams:
        try:
            return MarbleParams(self.mass, self.radius, self.viscosity, self.beta, self.chiV, self.magnetic)
        except ValueError as exc:
            raise ConfigError(f"invalid marble: {exc}") from exc


@dataclass
class PlantSection:
    marbles: list = field(default_factory=lambda: [MarbleSpec()])
    workspace: list = field(default_factory=lambda: [-0.05, 0.05])
    detach_threshold: float = 1.0e-6
    capture_force: float = 0.0
    capture_duration: float = 0.0

    def __post_init__(self):
        self.marbles = [
            m if isinstance(m, MarbleSpec) else _from_mapping(MarbleSpec, m, "plant.marbles[]")
            for m in self.marbles
        ]
        if not self.marbles:
            raise ConfigError("plant.marbles must list at least one marble")
        if len(self.workspace) != 2 or not self.workspace[0] < self.workspace[1]:
            raise ConfigError("plant.workspace must be [x_lo, x_hi] with x_lo < x_hi")
        self.workspace = [float(w) for w in self.workspace]


@dataclass
class ControllerSection:
    kp: float = 2.0e-4
    ki: float = 4.0e-5
    drag_ff: Optional[float] = None
    mass_ff: Optional[float] = None
    integral_limit: float = 2.0e-7

    def gains_for(self, marble: MarbleParams) -> ControllerGains:
        return ControllerGains(
            kp=self.kp,
            ki=self.ki,
            drag_ff=marble.drag_coefficient if self.drag_ff is None else self.drag_ff,
            mass_ff=marble.mass if self.mass_ff is None else self.mass_ff,
            integral_limit=self.integral_limit,
        )


@dataclass
class RunSection:
    mode: str = "single"
    duration: float = 50.0
    control_rate: float = 30.0
    dt: float = 1e-3
    seed: int = 0
    saturation_fraction: float = 0.5
    singular_window: int = 3
    dispense_time: Optional[float] = None
    settle_window: float = 0.1
    settle_tol: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if not self.duration > 0:
            raise ConfigError("run.duration must be positive")
        if not self.control_rate > 0:
            raise ConfigError("run.control_rate must be positive")
        if not 0 < self.dt <= 1.0 / self.control_rate:
            raise ConfigError("run.dt must be positive and no longer than the control period")

    @property
    def period(self) -> float:
        return 1.0 / self.control_rate

    @property
    def substeps(self) -> int:
        """Physics steps per control period; the effective step is ``period / substeps`` <= ``dt``."""
        return max(1, math.ceil(self.period / self.dt - 1e-9))

    @property
    def ticks(self) -> int:
        return int(round(self.duration * self.control_rate))


@dataclass
class MeasurementSection:
    noise_std: float = 0.0
    quantization: float = 0.0
    latency: int = 0

    def __post_init__(self):
        if self.noise_std < 0 or self.quantization < 0:
            raise ConfigError("measurement noise_std and quantization must be >= 0")
        if int(self.latency) != self.latency or self.latency < 0:
            raise ConfigError("measurement.latency must be a non-negative integer")
        self.latency = int(self.latency)

    @classmethod
    def realistic(cls) -> "MeasurementSection":
        """Camera-like defaults: 0.05 mm noise, 0.1 mm quantisation, one period late."""
        return cls(noise_std=5e-5, quantization=1e-4, latency=1)


@dataclass
class OutputSection:
    dir: Optional[str] = None
    plot: bool = False


@dataclass
class ScenarioConfig:
    setup: SetupSection
    plant: PlantSection = field(default_factory=PlantSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    trajectory: Any = "eq15"
    run: RunSection = field(default_factory=RunSection)
    measurement: MeasurementSection = field(default_factory=MeasurementSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        self.trajectory_specs()  # validates

    def trajectory_specs(self) -> list:
        raw = self.trajectory if isinstance(self.trajectory, list) else [self.trajectory]
        return [trajectories.from_dict(t) for t in raw]

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, data: Any) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("scenario config must be a JSON object")
        unknown = set(data) - set(TOP_LEVEL_KEYS)
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
        if "setup" not in data:
            raise ConfigError("scenario config needs a 'setup' section")
        sections = {
            "setup": SetupSection,
            "plant": PlantSection,
            "controller": ControllerSection,
            "run": RunSection,
            "measurement": MeasurementSection,
            "output": OutputSection,
        }
        kwargs = {}
        for key, cls_ in sections.items():
            if key in data:
                kwargs[key] = _from_mapping(cls_, data[key], key)
        if "trajectory" in data:
            kwargs["trajectory"] = copy.deepcopy(data["trajectory"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of everything except ``output``."""
        data = self.to_dict()
        data.pop("output")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, overrides: dict) -> "ScenarioConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            apply_override(data, key, value)
        return ScenarioConfig.from_dict(data)


def parse_override(text: str) -> tuple[str, Any]:
    """Split ``a.b.c=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_override(data: dict, dotted: str, value: Any) -> None:
    """Set ``data[a][b][c] = value`` for ``dotted = "a.b.c"``; list indices allowed."""
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        node = _child(node, part, dotted)
    last = parts[-1]
    if isinstance(node, list):
        idx = _index(last, node, dotted)
        node[idx] = value
    elif isinstance(node, dict):
        if last not in node:
            raise ConfigError(f"unknown override key {dotted!r}")
        node[last] = value
    else:
        raise ConfigError(f"cannot override into {dotted!r}")


def _child(node, part, dotted):
    if isinstance(node, list):
        return node[_index(part, node, dotted)]
    if isinstance(node, dict) and part in node:
        return node[part]
    raise ConfigError(f"unknown override key {dotted!r}")


def _index(part, node, dotted):
    try:
        idx = int(part)
    except ValueError:
        raise ConfigError(f"override {dotted!r}: {part!r} is not a list index") from None
    if not -len(node) <= idx < len(node):
        raise ConfigError(f"override {dotted!r}: index {idx} out of range")
    return idx


def default_setup(kind: int) -> SetupSection:
    kind = SetupKind(kind)
    return SetupSection(
        kind=int(kind),
        magnets=[MagnetSpec(x, m) for x, m in DEFAULT_GEOMETRY[kind]],
        fixed_current=DEFAULT_FIXED_CURRENT[kind],
    )


def default_config(setup: int = 1, trajectory: Any = "eq15", *, duration: Optional[float] = None) -> ScenarioConfig:
    """Single-marble scenario on one of the three setups."""
    traj_duration = {"eq15": 50.0, "fig9a": 40.0, "fig9b": 50.0, "fig10": 80.0}
    cfg = ScenarioConfig(setup=default_setup(setup), trajectory=trajectory)
    if duration is not None:
        cfg.run.duration = duration
    elif isinstance(trajectory, str) and trajectory in traj_duration:
        cfg.run.duration = traj_duration[trajectory]
    return cfg


def two_fm_config(duration: float = 100.0) -> ScenarioConfig:
    """Two magnetic marbles on the two-magnet setup following the "eq19-fm1"/"eq19-fm2" references."""
    return ScenarioConfig(
        setup=default_setup(3),
        plant=PlantSection(marbles=[MarbleSpec(), MarbleSpec()]),
        trajectory=["eq19-fm1", "eq19-fm2"],
        run=RunSection(mode="two_fm", duration=duration),
    )


def carry_config(setup: int = 3, duration: float = 90.0) -> ScenarioConfig:
    """Magnetic marble collecting a passive marble on the "fig10" path, then dispensing it."""
    passive = MarbleSpec(mass=1.4e-5, chiV=0.0, magnetic=False, x0=0.014)
    return ScenarioConfig(
        setup=default_setup(setup),
        plant=PlantSection(marbles=[MarbleSpec(), passive]),
        trajectory="fig10",
        run=RunSection(mode="carry", duration=duration, dispense_time=80.0),
    )
