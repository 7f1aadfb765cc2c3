"""Flux density, flux gradient and induced-dipole force on a ferrofluid marble.

The workspace is the x-axis. A pair of Helmholtz coils adds a uniform field
along +z with zero gradient; permanent magnets are point dipoles whose moment
rotates in the y-z plane (angle ``theta`` measured from +z). The marble has
no remanent moment, so the force is

    F = (chiV / mu0) * (grad B)^T B

which, evaluated on the x-axis, reduces to a closed form used by
:func:`axial_force`. :func:`field_force` keeps the full tensor route and is
used as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import SaturationError, SingularityError

MU0 = 4.0e-7 * math.pi  # [T*m/A]

# Coil calibration: 1.817 mT per ampere.
DEFAULT_COIL_GAIN = 1.817e-3  # [T/A]

# Point-dipole model is not evaluated closer than this to a magnet centre.
DEFAULT_R_MIN = 5.0e-3  # [m]


@dataclass(frozen=True)
class HelmholtzCoil:
    """Uniform-field coil pair with a linear flux/current calibration.

    Args:
        gain: Flux density per ampere [T/A].
        current_limits: ``(I_min, I_max)`` in amperes.
    """

    gain: float = DEFAULT_COIL_GAIN
    current_limits: tuple[float, float] = (-5.0, 5.0)

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError(f"coil gain must be positive, got {self.gain}")
        lo, hi = self.current_limits
        if not lo < hi:
            raise ValueError(f"current limits must satisfy I_min < I_max, got {self.current_limits}")

    def within_limits(self, current: float) -> bool:
        lo, hi = self.current_limits
        return lo <= current <= hi

    def clamp(self, current: float) -> tuple[float, bool]:
        """Clamp ``current`` to the limits; second item tells whether it was clipped."""
        lo, hi = self.current_limits
        clipped = min(max(current, lo), hi)
        return clipped, clipped != current


def helmholtz_flux(coil: HelmholtzCoil, current: float) -> float:
    """Return the z flux density [T] produced by ``current`` amperes."""
    if not coil.within_limits(current):
        raise SaturationError(
            f"coil current {current:g} A outside limits {coil.current_limits}"
        )
    return coil.gain * current


@dataclass(frozen=True)
class MagnetSource:
    """Permanent-magnet point dipole.

    Args:
        position: Centre of the magnet [m], 3-vector.
        moment: Moment magnitude |m| [A*m^2].
        theta: Angle between the moment and +z [rad], in [0, pi].
    """

    position: tuple[float, float, float]
    moment: float
    theta: float = 0.0

    def __post_init__(self):
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise ValueError(f"magnet position must be a finite 3-vector, got {self.position}")
        object.__setattr__(self, "position", pos)
        if self.moment < 0:
            raise ValueError(f"moment magnitude must be >= 0, got {self.moment}")
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")

    @classmethod
    def on_axis(cls, x: float, moment: float, theta: float = 0.0) -> "MagnetSource":
        return cls((x, 0.0, 0.0), moment, theta)

    @property
    def x(self) -> float:
        return self.position[0]

    @property
    def direction(self) -> np.ndarray:
        """Unit moment vector, rotated about the x-axis."""
        return np.array([0.0, math.sin(self.theta), math.cos(self.theta)])

    def with_theta(self, theta: float) -> "MagnetSource":
        return replace(self, theta=theta)


@dataclass(frozen=True)
class MagneticEnvironment:
    """Coil state plus any number of magnets.

    ``include_pm_field`` decides whether the magnets' own flux adds to the
    coil flux that magnetises the marble. Gradients always come from the
    magnets only.
    """

    coil: HelmholtzCoil
    coil_current: float
    magnets: tuple[MagnetSource, ...] = field(default_factory=tuple)
    include_pm_field: bool = False
    r_min: float = DEFAULT_R_MIN

    def __post_init__(self):
        object.__setattr__(self, "magnets", tuple(self.magnets))
        if not self.coil.within_limits(self.coil_current):
            raise SaturationError(
                f"coil current {self.coil_current:g} A outside limits {self.coil.current_limits}"
            )

    @property
    def coil_flux(self) -> float:
        return self.coil.gain * self.coil_current


def _separation(magnet: MagnetSource, point: Sequence[float], r_min: float) -> tuple[np.ndarray, float]:
    r = np.asarray(point, dtype=float) - np.asarray(magnet.position)
    dist = float(np.linalg.norm(r))
    if dist < r_min:
        raise SingularityError(
            f"point {tuple(point)} is {dist:.3e} m from magnet at {magnet.position} (r_min={r_min:g} m)"
        )
    return r, dist


def dipole_flux(magnet: MagnetSource, point: Sequence[float], r_min: float = DEFAULT_R_MIN) -> np.ndarray:
    """Flux density [T] of ``magnet`` at ``point``.

    B = mu0 |m| / (4 pi |r|^3) * (3 r_hat r_hat^T - U) m_hat
    """
    r, dist = _separation(magnet, point, r_min)
    r_hat = r / dist
    m_hat = magnet.direction
    scale = MU0 * magnet.moment / (4.0 * math.pi * dist**3)
    return scale * (3.0 * r_hat * np.dot(r_hat, m_hat) - m_hat)


def dipole_flux_gradient(magnet: MagnetSource, point: Sequence[float], r_min: float = DEFAULT_R_MIN) -> np.ndarray:
    """Spatial gradient of :func:`dipole_flux`, ``G[i, j] = dB_i / dx_j`` [T/m].

    G = 3 mu0 |m| / (4 pi |r|^4) * (m r^T + r m^T - (5 r r^T - U)(m . r))
    with unit vectors throughout. The tensor is symmetric.
    """
    r, dist = _separation(magnet, point, r_min)
    r_hat = r / dist
    m_hat = magnet.direction
    m_dot_r = float(np.dot(m_hat, r_hat))
    scale = 3.0 * MU0 * magnet.moment / (4.0 * math.pi * dist**4)
    rr = np.outer(r_hat, r_hat)
    return scale * (
        np.outer(m_hat, r_hat) + np.outer(r_hat, m_hat) - (5.0 * rr - np.eye(3)) * m_dot_r
    )


def total_flux(env: MagneticEnvironment, point: Sequence[float]) -> np.ndarray:
    """Flux magnetising the marble at ``point``: coil plus (optionally) magnets."""
    b = np.array([0.0, 0.0, env.coil_flux])
    if env.include_pm_field:
        for magnet in env.magnets:
            b = b + dipole_flux(magnet, point, env.r_min)
    return b


def total_flux_gradient(env: MagneticEnvironment, point: Sequence[float]) -> np.ndarray:
    g = np.zeros((3, 3))
    for magnet in env.magnets:
        g = g + dipole_flux_gradient(magnet, point, env.r_min)
    return g


def field_force(env: MagneticEnvironment, chiV: float, point: Sequence[float]) -> np.ndarray:
    """Full 3-vector induced-dipole force [N] via the flux and gradient tensors."""
    b = total_flux(env, point)
    g = total_flux_gradient(env, point)
    return (chiV / MU0) * (g.T @ b)


def axial_force(env: MagneticEnvironment, marble, x_fm: float) -> float:
    """x-component of the magnetic force [N] on a marble at ``x_fm``.

    ``marble`` is anything with a ``chiV`` attribute (lumped susceptibility
    times volume, m^3). For magnets on the x-axis the force is

        F = chiV * Bz * sum_j s_j 3 |m_j| cos(theta_j) / (4 pi r_j^4)
          + chiV * By * sum_j s_j 3 |m_j| sin(theta_j) / (4 pi r_j^4)

    with ``s_j = sign(x_fm - x_j)`` so that like-aligned fields repel. ``By``
    is nonzero only when the magnets' own field is included.
    """
    chiV = marble.chiV
    if chiV == 0.0:
        return 0.0
    if any(m.position[1] != 0.0 or m.position[2] != 0.0 for m in env.magnets):
        return float(field_force(env, chiV, (x_fm, 0.0, 0.0))[0])

    bz = env.coil_flux
    by = 0.0
    grad_z = 0.0
    grad_y = 0.0
    for magnet in env.magnets:
        r = x_fm - magnet.position[0]
        dist = abs(r)
        if dist < env.r_min:
            raise SingularityError(
                f"marble at x={x_fm:.6g} m is {dist:.3e} m from magnet at x={magnet.position[0]:.6g} m"
            )
        side = 1.0 if r > 0 else -1.0
        c = math.cos(magnet.theta)
        s = math.sin(magnet.theta)
        k = 3.0 * magnet.moment / (4.0 * math.pi * dist**4) * side
        grad_z += k * c
        grad_y += k * s
        if env.include_pm_field:
            b0 = MU0 * magnet.moment / (4.0 * math.pi * dist**3)
            bz -= b0 * c
            by -= b0 * s
    return chiV * (bz * grad_z + by * grad_y)


def pm_axial_flux(magnet: MagnetSource, x_fm: float) -> float:
    """z flux [T] of an on-axis magnet at an on-axis point (r perpendicular to z)."""
    dist = abs(x_fm - magnet.position[0])
    return -MU0 * magnet.moment * math.cos(magnet.theta) / (4.0 * math.pi * dist**3)
