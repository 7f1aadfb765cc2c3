"""One-dimensional marble dynamics on a water surface.

Each free body obeys ``m x'' = F(t, x) - c x' + d(t, x)`` with Stokes-like
drag ``c = 6 pi beta R mu``. A magnetic marble and a passive marble may be
rigidly attached; the pair then moves as one body with summed mass and drag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

from .errors import IntegrationDivergedError

ForceLike = Union[float, Callable[[float, float], float]]


@dataclass(frozen=True)
class MarbleParams:
    """Physical parameters of one marble (SI units).

    ``chiV`` is the lumped susceptibility-volume product [m^3]; it must be
    zero for a passive (non-magnetic) marble. ``beta`` may be zero to model
    a frictionless body.
    """

    mass: float = 1.7e-5
    radius: float = 1.5e-3
    viscosity: float = 5.0e-3
    beta: float = 1.0
    chiV: float = 0.0
    magnetic: bool = True

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.viscosity > 0:
            raise ValueError(f"viscosity must be positive, got {self.viscosity}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.chiV < 0:
            raise ValueError(f"chiV must be >= 0, got {self.chiV}")
        if not self.magnetic and self.chiV != 0.0:
            raise ValueError("a non-magnetic marble must have chiV = 0")

    @property
    def drag_coefficient(self) -> float:
        """Linear drag coefficient 6 pi beta R mu [N*s/m]."""
        return 6.0 * math.pi * self.beta * self.radius * self.viscosity


def friction_force(params: MarbleParams, v: float) -> float:
    """Drag magnitude with the sign of ``v``; it enters the equation of motion negated."""
    return params.drag_coefficient * v


@dataclass(frozen=True)
class MarbleState:
    x: float
    v: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class Attachment:
    """Rigid bond between a magnetic member and a passive member.

    ``offset`` is ``x_passive - x_magnetic`` while attached.
    """

    magnetic: int
    passive: int
    offset: float


@dataclass(frozen=True)
class Plant:
    """Collection of marbles advanced together.

    Args:
        params: Per-marble parameters.
        states: Per-marble kinematic state.
        workspace: ``(x_lo, x_hi)`` bounds on marble centres [m].
        dt: Default integrator step [s].
        attachment: Current rigid pair, if any.
        detach_threshold: Pull force on the magnetic member [N] that breaks
            the capillary bond.
        disturbance: Optional additive force ``d(t, x)`` [N] on every body.
    """

    params: tuple[MarbleParams, ...]
    states: tuple[MarbleState, ...]
    workspace: tuple[float, float] = (-0.05, 0.05)
    dt: float = 1e-3
    attachment: Optional[Attachment] = None
    detach_threshold: float = math.inf
    disturbance: Optional[Callable[[float, float], float]] = None

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.params) != len(self.states):
            raise ValueError("params and states must have the same length")
        lo, hi = self.workspace
        if not lo < hi:
            raise ValueError(f"workspace must satisfy x_lo < x_hi, got {self.workspace}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @classmethod
    def single(cls, params: MarbleParams, x0: float, v0: float = 0.0, **kwargs) -> "Plant":
        return cls((params,), (MarbleState(x0, v0),), **kwargs)

    @property
    def t(self) -> float:
        return self.states[0].t

    def positions(self) -> list[float]:
        return [s.x for s in self.states]

    def gap(self, i: int = 0, j: int = 1) -> float:
        """Surface-to-surface distance between marbles ``i`` and ``j``."""
        d = abs(self.states[j].x - self.states[i].x)
        return d - self.params[i].radius - self.params[j].radius


def _as_callable(force: ForceLike) -> Callable[[float, float], float]:
    if callable(force):
        return force
    value = float(force)
    return lambda t, x: value


def _rk4_body(f_ext, disturbance, mass, drag, x, v, t, h):
    def accel(tt, xx, vv):
        a = f_ext(tt, xx) - drag * vv
        if disturbance is not None:
            a += disturbance(tt, xx)
        return a / mass

    k1x = v
    k1v = accel(t, x, v)
    k2x = v + 0.5 * h * k1v
    k2v = accel(t + 0.5 * h, x + 0.5 * h * k1x, k2x)
    k3x = v + 0.5 * h * k2v
    k3v = accel(t + 0.5 * h, x + 0.5 * h * k2x, k3x)
    k4x = v + h * k3v
    k4v = accel(t + h, x + h * k3x, k4x)
    x_new = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v_new = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return x_new, v_new


def step(plant: Plant, forces: Sequence[ForceLike], dt: Optional[float] = None) -> Plant:
    """Advance every body by one classical RK4 step.

    ``forces[i]`` is the actuator force on marble ``i``: either a constant or a
    callable ``f(t, x)`` re-evaluated at each RK stage. For an attached pair
    the passive member's force is ignored except through the shared body.
    Bodies hitting a workspace wall stop there with zero velocity.
    """
    h = plant.dt if dt is None else dt
    if not h > 0:
        raise ValueError(f"dt must be positive, got {h}")
    if len(forces) != len(plant.states):
        raise ValueError(f"expected {len(plant.states)} forces, got {len(forces)}")
    lo, hi = plant.workspace
    new_states = list(plant.states)
    att = plant.attachment
    skip = {att.passive} if att is not None else set()

    for i, (p, s) in enumerate(zip(plant.params, plant.states)):
        if i in skip:
            continue
        f_ext = _as_callable(forces[i])
        mass, drag = p.mass, p.drag_coefficient
        x_lo, x_hi = lo, hi
        if att is not None and i == att.magnetic:
            q = plant.params[att.passive]
            mass += q.mass
            drag += q.drag_coefficient
            x_lo = max(lo, lo - att.offset)
            x_hi = min(hi, hi - att.offset)
        x, v = _rk4_body(f_ext, plant.disturbance, mass, drag, s.x, s.v, s.t, h)
        if not (math.isfinite(x) and math.isfinite(v)):
            raise IntegrationDivergedError(f"marble {i} state diverged at t={s.t + h:.6g} s")
        if x < x_lo:
            x, v = x_lo, 0.0
        elif x > x_hi:
            x, v = x_hi, 0.0
        new_states[i] = MarbleState(x, v, s.t + h)
        if att is not None and i == att.magnetic:
            new_states[att.passive] = MarbleState(x + att.offset, v, s.t + h)

    return replace(plant, states=tuple(new_states))


def try_attach(plant: Plant, magnetic: int = 0, passive: int = 1) -> Plant:
    """Bond the two marbles when their surfaces touch.

    The merged body takes the momentum-weighted velocity and the passive
    member is snapped to exact contact.
    """
    if plant.attachment is not None or len(plant.states) < 2:
        return plant
    if plant.gap(magnetic, passive) > 0.0:
        return plant
    pm, pp = plant.params[magnetic], plant.params[passive]
    sm, sp = plant.states[magnetic], plant.states[passive]
    v = (pm.mass * sm.v + pp.mass * sp.v) / (pm.mass + pp.mass)
    side = 1.0 if sp.x >= sm.x else -1.0
    offset = side * (pm.radius + pp.radius)
    states = list(plant.states)
    states[magnetic] = MarbleState(sm.x, v, sm.t)
    states[passive] = MarbleState(sm.x + offset, v, sp.t)
    return replace(plant, states=tuple(states), attachment=Attachment(magnetic, passive, offset))


def try_detach(plant: Plant, commanded_force: float) -> Plant:
    """Break the bond if ``commanded_force`` pulls the magnetic member away hard enough.

    A force pushing toward the passive marble compresses the contact and
    never loads the capillary bond.
    """
    att = plant.attachment
    if att is None:
        return plant
    away = -math.copysign(1.0, att.offset)
    if commanded_force * away > plant.detach_threshold:
        return replace(plant, attachment=None)
    return plant


def kinetic_energy(plant: Plant) -> float:
    return sum(0.5 * p.mass * s.v**2 for p, s in zip(plant.params, plant.states))
