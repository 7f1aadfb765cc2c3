"""Reference trajectories with analytic first and second derivatives.

All specs are immutable and :func:`evaluate` is pure. Named presets cover
the standard steering, reciprocating and carrying references (positions in
metres, time in seconds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

from .errors import ConfigError

CM = 1e-2


@dataclass(frozen=True)
class Sinusoid:
    """``center + amplitude * sin(w t + phase)`` (``cos`` when ``cosine``)."""

    center: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    cosine: bool = False

    def __post_init__(self):
        _check_period(self.period)

    def __call__(self, t: float) -> tuple[float, float, float]:
        w = 2.0 * math.pi / self.period
        arg = w * t + self.phase
        if self.cosine:
            s, c = math.cos(arg), -math.sin(arg)
        else:
            s, c = math.sin(arg), math.cos(arg)
        a = self.amplitude
        return self.center + a * s, a * w * c, -a * w * w * s


@dataclass(frozen=True)
class RampedSinusoid:
    """``amplitude_slope * t * sin(w t)``: oscillation with linearly growing amplitude."""

    amplitude_slope: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        _check_period(self.period)

    def __call__(self, t: float) -> tuple[float, float, float]:
        return _linear_amp_sin(0.0, self.amplitude_slope, self.period, t)


@dataclass(frozen=True)
class DecayingSinusoid:
    """``(amplitude0 - amplitude_slope * t) * sin(w t)``."""

    amplitude0: float = 0.0
    amplitude_slope: float = 0.0
    period: float = 1.0

    def __post_init__(self):
        _check_period(self.period)

    def __call__(self, t: float) -> tuple[float, float, float]:
        return _linear_amp_sin(self.amplitude0, -self.amplitude_slope, self.period, t)


@dataclass(frozen=True)
class Constant:
    x: float = 0.0

    def __call__(self, t: float) -> tuple[float, float, float]:
        return self.x, 0.0, 0.0


@dataclass(frozen=True)
class Piecewise:
    """Segments ``(t_start, spec)``; each is evaluated on the global clock.

    At exactly a switch time the earlier segment is used.
    """

    segments: tuple[tuple[float, "TrajectorySpec"], ...]

    def __post_init__(self):
        segs = tuple((float(t0), spec) for t0, spec in self.segments)
        if not segs:
            raise ValueError("piecewise trajectory needs at least one segment")
        starts = [t0 for t0, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"switch times must be strictly increasing, got {starts}")
        object.__setattr__(self, "segments", segs)

    def __call__(self, t: float) -> tuple[float, float, float]:
        active = self.segments[0][1]
        for t0, spec in self.segments[1:]:
            if t > t0:
                active = spec
            else:
                break
        return active(t)


TrajectorySpec = Union[Sinusoid, RampedSinusoid, DecayingSinusoid, Constant, Piecewise]


def _check_period(period: float) -> None:
    if not period > 0:
        raise ValueError(f"period must be positive, got {period}")


def _linear_amp_sin(a0: float, slope: float, period: float, t: float):
    w = 2.0 * math.pi / period
    amp = a0 + slope * t
    s, c = math.sin(w * t), math.cos(w * t)
    x = amp * s
    v = slope * s + amp * w * c
    a = 2.0 * slope * w * c - amp * w * w * s
    return x, v, a


def evaluate(spec: TrajectorySpec, t: float) -> tuple[float, float, float]:
    """Return ``(x_d, v_d, a_d)`` of ``spec`` at time ``t`` >= 0."""
    if t < 0:
        raise ValueError(f"trajectory time must be >= 0, got {t}")
    return spec(t)


PRESETS: dict[str, tuple[str, TrajectorySpec]] = {
    "eq15": (
        "3 sin(2 pi t / 50) cm",
        Sinusoid(amplitude=3 * CM, period=50.0),
    ),
    "eq19-fm1": (
        "3 + 1.5 sin(2 pi t / 50) cm",
        Sinusoid(center=3 * CM, amplitude=1.5 * CM, period=50.0),
    ),
    "eq19-fm2": (
        "-2.5 + cos(2 pi t / 100) cm",
        Sinusoid(center=-2.5 * CM, amplitude=1 * CM, period=100.0, cosine=True),
    ),
    "fig9a": (
        "0.1 t sin(2 pi t / 6) cm for t <= 20 s, then 3 sin(2 pi t / 6) cm",
        Piecewise((
            (0.0, RampedSinusoid(amplitude_slope=0.1 * CM, period=6.0)),
            (20.0, Sinusoid(amplitude=3 * CM, period=6.0)),
        )),
    ),
    "fig9b": (
        "(2 - 0.1 t) sin(2 pi t / 5) cm for t <= 30 s, then -1 sin(2 pi t / 5) cm",
        Piecewise((
            (0.0, DecayingSinusoid(amplitude0=2 * CM, amplitude_slope=0.1 * CM, period=5.0)),
            (30.0, Sinusoid(amplitude=-1 * CM, period=5.0)),
        )),
    ),
    "fig10": (
        "2 sin(2 pi t / 80) cm",
        Sinusoid(amplitude=2 * CM, period=80.0),
    ),
}


def preset(name: str) -> TrajectorySpec:
    try:
        return PRESETS[name][1]
    except KeyError:
        raise ConfigError(f"unknown trajectory preset {name!r}; choose from {sorted(PRESETS)}") from None


_KINDS = {
    "sinusoid": Sinusoid,
    "ramped_sinusoid": RampedSinusoid,
    "decaying_sinusoid": DecayingSinusoid,
    "constant": Constant,
}


def from_dict(data) -> TrajectorySpec:
    """Build a spec from its JSON form.

    Accepted forms: ``"eq15"``, ``{"preset": "eq15"}``,
    ``{"type": "sinusoid", "amplitude": 0.03, "period": 50}`` and
    ``{"type": "piecewise", "segments": [[0, {...}], [20, {...}]]}``.
    """
    if isinstance(data, str):
        return preset(data)
    if not isinstance(data, dict):
        raise ConfigError(f"trajectory must be a preset name or an object, got {data!r}")
    data = dict(data)
    if "preset" in data:
        if len(data) != 1:
            raise ConfigError(f"preset trajectory takes no other keys: {sorted(data)}")
        return preset(data["preset"])
    kind = data.pop("type", None)
    if kind == "piecewise":
        extra = set(data) - {"segments"}
        if extra:
            raise ConfigError(f"unknown piecewise keys: {sorted(extra)}")
        try:
            return Piecewise(tuple((t0, from_dict(s)) for t0, s in data["segments"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad piecewise trajectory: {exc}") from exc
    if kind not in _KINDS:
        raise ConfigError(f"unknown trajectory type {kind!r}")
    try:
        return _KINDS[kind](**data)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} trajectory: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def to_dict(spec: TrajectorySpec) -> dict:
    if isinstance(spec, Piecewise):
        return {"type": "piecewise", "segments": [[t0, to_dict(s)] for t0, s in spec.segments]}
    for name, cls in _KINDS.items():
        if type(spec) is cls:
            out = {"type": name}
            out.update(spec.__dict__)
            return out
    raise TypeError(f"not a trajectory spec: {spec!r}")
