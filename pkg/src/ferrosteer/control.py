"""Desired-force law and its inversion into actuator commands.

The controller is PI on position error plus velocity and acceleration
feed-forward. The desired force is then inverted into whatever the active
setup can command:

* setup 1 - one fixed magnet (theta = 0), variable coil current;
* setup 2 - one rotating magnet, fixed coil current;
* setup 3 - two rotating magnets on opposite sides, fixed coil current,
  repulsion only (cos theta in [0, 1]);
* two-marble mode - setup 3 geometry, both marbles steered through a 2x2
  allocation over the full cos theta range [-1, 1].
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import AllocationSingularError, ConfigError, NoAuthorityError, SingularityError
from .magnetics import (
    DEFAULT_R_MIN,
    HelmholtzCoil,
    MagneticEnvironment,
    MagnetSource,
    pm_axial_flux,
)


class SetupKind(enum.IntEnum):
    VARIABLE_CURRENT = 1
    SINGLE_ROTATING = 2
    DUAL_ROTATING = 3


@dataclass(frozen=True)
class SetupConfig:
    """Actuation hardware for one experiment.

    Magnets are listed left to right; their ``theta`` is the initial angle.
    ``slew_rate`` [rad/s] limits magnet rotation per control tick (``None``
    disables it). ``include_pm_field`` defaults to on for setup 1 and off for
    the rotating setups, where the coil field is taken to dominate.
    """

    kind: SetupKind
    magnets: tuple[MagnetSource, ...]
    coil: HelmholtzCoil = field(default_factory=HelmholtzCoil)
    fixed_current: float = 0.0
    slew_rate: Optional[float] = math.pi
    include_pm_field: Optional[bool] = None
    r_min: float = DEFAULT_R_MIN
    cond_limit: float = 1e8

    def __post_init__(self):
        object.__setattr__(self, "kind", SetupKind(self.kind))
        mags = tuple(sorted(self.magnets, key=lambda m: m.x))
        object.__setattr__(self, "magnets", mags)
        if self.include_pm_field is None:
            object.__setattr__(self, "include_pm_field", self.kind is SetupKind.VARIABLE_CURRENT)
        expected = 2 if self.kind is SetupKind.DUAL_ROTATING else 1
        if len(mags) != expected:
            raise ConfigError(f"setup {int(self.kind)} needs exactly {expected} magnet(s), got {len(mags)}")
        if self.kind is SetupKind.VARIABLE_CURRENT:
            if mags[0].theta != 0.0:
                raise ConfigError("setup 1 magnet is fixed at theta = 0")
        else:
            if self.include_pm_field:
                raise ConfigError("rotating setups assume the coil field dominates; include_pm_field must be false")
            if not self.coil.within_limits(self.fixed_current):
                raise ConfigError(f"fixed current {self.fixed_current} A outside coil limits")
        if self.slew_rate is not None and not self.slew_rate > 0:
            raise ConfigError(f"slew_rate must be positive or null, got {self.slew_rate}")

    @property
    def rotating(self) -> bool:
        return self.kind is not SetupKind.VARIABLE_CURRENT

    @property
    def coil_flux(self) -> float:
        """Fixed coil flux [T] of the rotating setups."""
        return self.coil.gain * self.fixed_current


@dataclass(frozen=True)
class ControllerGains:
    kp: float
    ki: float
    drag_ff: float
    mass_ff: float
    integral_limit: float = math.inf

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ConfigError("kp and ki must be non-negative")
        if not self.integral_limit > 0:
            raise ConfigError("integral_limit must be positive")


@dataclass(frozen=True)
class ControllerState:
    integral: float = 0.0  # [m*s]
    last_t: Optional[float] = None


@dataclass(frozen=True)
class ActuationCommand:
    """Output of one control tick.

    Exactly one of ``current`` (setup 1) or ``angles`` (rotating setups) is
    set. ``saturated`` means the exact inverse fell outside the actuator range
    and was clamped; ``rate_limited`` means the slew limit held an angle back.
    """

    current: Optional[float] = None
    angles: tuple[float, ...] = ()
    saturated: bool = False
    rate_limited: bool = False
    f_des: tuple[float, ...] = ()

    @property
    def angle(self) -> float:
        return self.angles[0]


def desired_force(
    gains: ControllerGains,
    state: ControllerState,
    x: float,
    x_d: float,
    v_d: float,
    a_d: float,
    dt: float,
) -> tuple[float, ControllerState]:
    """PI plus feed-forward force; the error is ``x_d - x``.

    The integral advances by one rectangle ``(x_d - x) * dt`` and is clamped so
    that ``|ki * integral| <= integral_limit``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    err = x_d - x
    integral = state.integral + err * dt
    if gains.ki > 0 and math.isfinite(gains.integral_limit):
        bound = gains.integral_limit / gains.ki
        integral = min(max(integral, -bound), bound)
    force = gains.kp * err + gains.ki * integral + gains.drag_ff * v_d + gains.mass_ff * a_d
    t = dt if state.last_t is None else state.last_t + dt
    return force, ControllerState(integral, t)


def _gradient_gain(moment: float, chiV: float, x_fm: float, x_pm: float, r_min: float) -> float:
    """Signed force per tesla of magnetising flux for one magnet at theta = 0."""
    r = x_fm - x_pm
    dist = abs(r)
    if dist < r_min:
        raise SingularityError(f"marble at x={x_fm:.6g} m within {r_min:g} m of magnet at x={x_pm:.6g} m")
    return math.copysign(3.0 * chiV * moment / (4.0 * math.pi * dist**4), r)


def invert_setup1(f_des: float, setup: SetupConfig, marble, x_fm: float) -> ActuationCommand:
    """Coil current producing ``f_des`` with the fixed magnet.

    Needed magnetising flux is ``f_des / g``; the coil supplies it minus the
    magnet's own z flux at the marble (when that field is modelled).
    """
    magnet = setup.magnets[0]
    g = _gradient_gain(magnet.moment, marble.chiV, x_fm, magnet.x, setup.r_min)
    if g == 0.0:
        raise NoAuthorityError("marble has no magnetic response (chiV = 0 or zero moment)")
    b_needed = f_des / g
    if setup.include_pm_field:
        b_needed -= pm_axial_flux(magnet, x_fm)
    current, clipped = setup.coil.clamp(b_needed / setup.coil.gain)
    return ActuationCommand(current=current, saturated=clipped, f_des=(f_des,))


def invert_setup2(f_des: float, setup: SetupConfig, marble, x_fm: float) -> ActuationCommand:
    """Magnet angle producing ``f_des`` under the fixed coil field."""
    magnet = setup.magnets[0]
    g = _gradient_gain(magnet.moment, marble.chiV, x_fm, magnet.x, setup.r_min) * setup.coil_flux
    if g == 0.0:
        raise NoAuthorityError("zero coil field or zero magnet moment: no force authority")
    c = f_des / g
    clipped = min(max(c, -1.0), 1.0)
    return ActuationCommand(angles=(math.acos(clipped),), saturated=clipped != c, f_des=(f_des,))


def invert_setup3(f_des: float, setup: SetupConfig, marble, x_fm: float) -> ActuationCommand:
    """Two repulsion-only angles producing ``f_des``.

    One magnet is held at theta = 0 and the other is opened toward 90 degrees.
    Which one is held depends on whether ``f_des`` exceeds the force of the
    balanced configuration (both at 0), so the command is continuous and the
    resulting zero-force point is always a stable equilibrium.
    """
    left, right = setup.magnets
    if not left.x < x_fm < right.x:
        raise SingularityError(f"marble at x={x_fm:.6g} m is not between the magnets")
    b = setup.coil_flux
    if not b > 0:
        raise NoAuthorityError("repulsion-only steering needs a positive coil field")
    g1 = _gradient_gain(left.moment, marble.chiV, x_fm, left.x, setup.r_min) * b
    g2 = _gradient_gain(right.moment, marble.chiV, x_fm, right.x, setup.r_min) * b
    if g1 == 0.0 or g2 == 0.0:
        raise NoAuthorityError("marble has no magnetic response")
    if f_des >= g1 + g2:
        c1, c2 = 1.0, (f_des - g1) / g2
    else:
        c1, c2 = (f_des - g2) / g1, 1.0
    k1 = min(max(c1, 0.0), 1.0)
    k2 = min(max(c2, 0.0), 1.0)
    return ActuationCommand(
        angles=(math.acos(k1), math.acos(k2)),
        saturated=(k1 != c1) or (k2 != c2),
        f_des=(f_des,),
    )


def allocation_matrix(setup: SetupConfig, marbles: Sequence, x_fm: Sequence[float]) -> np.ndarray:
    """``R[i, j]``: force on marble ``i`` per unit cos(theta_j) of magnet ``j``."""
    b = setup.coil_flux
    return np.array([
        [_gradient_gain(m.moment, p.chiV, x, m.x, setup.r_min) * b for m in setup.magnets]
        for p, x in zip(marbles, x_fm)
    ])


def invert_two_fm(
    f_des: Sequence[float], setup: SetupConfig, marbles: Sequence, x_fm: Sequence[float]
) -> ActuationCommand:
    """Solve ``R C = F`` for the two magnet cosines, clamped to [-1, 1]."""
    if setup.kind is not SetupKind.DUAL_ROTATING:
        raise ConfigError("two-marble steering needs the two-magnet setup")
    if len(f_des) != 2 or len(x_fm) != 2 or len(marbles) != 2:
        raise ValueError("two-marble allocation needs exactly two forces, positions and marbles")
    if setup.coil_flux == 0.0:
        raise NoAuthorityError("zero coil field: no force authority")
    R = allocation_matrix(setup, marbles, x_fm)
    cond = np.linalg.cond(R)
    if not cond < setup.cond_limit:
        raise AllocationSingularError(f"allocation matrix condition number {cond:.3g} at x={tuple(x_fm)}")
    C = np.linalg.solve(R, np.asarray(f_des, dtype=float))
    clipped = np.clip(C, -1.0, 1.0)
    return ActuationCommand(
        angles=tuple(math.acos(float(c)) for c in clipped),
        saturated=bool(np.any(np.abs(C) > 1.0)),
        f_des=tuple(float(f) for f in f_des),
    )


_INVERTERS = {
    SetupKind.VARIABLE_CURRENT: invert_setup1,
    SetupKind.SINGLE_ROTATING: invert_setup2,
    SetupKind.DUAL_ROTATING: invert_setup3,
}


def limit_slew(
    command: ActuationCommand, previous: Sequence[float], max_rate: Optional[float], dt: float
) -> ActuationCommand:
    """Move each angle at most ``max_rate * dt`` from ``previous``."""
    if max_rate is None or not command.angles:
        return command
    step = max_rate * dt
    out = []
    limited = False
    for target, prev in zip(command.angles, previous):
        delta = target - prev
        if abs(delta) > step:
            target = prev + math.copysign(step, delta)
            limited = True
        out.append(target)
    return replace(command, angles=tuple(out), rate_limited=limited)


def initial_angles(setup: SetupConfig) -> tuple[float, ...]:
    return tuple(m.theta for m in setup.magnets)


def control_step(
    setup: SetupConfig,
    gains,
    state,
    measurement,
    reference,
    dt: float,
    marble,
    previous: Optional[ActuationCommand] = None,
):
    """One pass of the loop: desired force, inversion, slew limiting.

    For a single marble ``measurement`` is a float, ``reference`` an
    ``(x_d, v_d, a_d)`` triple and ``state`` a :class:`ControllerState`.
    For two marbles each of ``gains``, ``state``, ``measurement``,
    ``reference`` and ``marble`` is a length-2 sequence.

    Returns ``(command, new_state)``.
    """
    if isinstance(measurement, (int, float)):
        x_d, v_d, a_d = reference
        f, new_state = desired_force(gains, state, measurement, x_d, v_d, a_d, dt)
        command = _INVERTERS[setup.kind](f, setup, marble, measurement)
    else:
        if len(measurement) != 2:
            raise ValueError("multi-marble control supports exactly two marbles")
        if isinstance(gains, ControllerGains):
            gains = (gains, gains)
        forces, new_state = [], []
        for g, s, x, ref in zip(gains, state, measurement, reference):
            f, ns = desired_force(g, s, x, *ref, dt)
            forces.append(f)
            new_state.append(ns)
        new_state = tuple(new_state)
        command = invert_two_fm(forces, setup, marble, measurement)
    prev_angles = previous.angles if previous is not None and previous.angles else initial_angles(setup)
    if setup.rotating:
        command = limit_slew(command, prev_angles, setup.slew_rate, dt)
    return command, new_state


def environment(setup: SetupConfig, command: ActuationCommand) -> MagneticEnvironment:
    """Magnetic environment realised by ``command`` on ``setup``."""
    if setup.kind is SetupKind.VARIABLE_CURRENT:
        return MagneticEnvironment(
            setup.coil, command.current, setup.magnets, setup.include_pm_field, setup.r_min
        )
    magnets = tuple(m.with_theta(a) for m, a in zip(setup.magnets, command.angles))
    return MagneticEnvironment(setup.coil, setup.fixed_current, magnets, setup.include_pm_field, setup.r_min)

