"""Self-checks run by ``ferrosteer validate``.

Each check returns a :class:`CheckResult`; none of them depend on the
scenario harness, only on the physics and control primitives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_CHIV, default_setup
from .control import (
    ActuationCommand,
    SetupConfig,
    environment,
    invert_setup1,
    invert_setup2,
    invert_setup3,
    invert_two_fm,
)
from .dynamics import MarbleParams, Plant, step
from .magnetics import (
    HelmholtzCoil,
    MagneticEnvironment,
    MagnetSource,
    axial_force,
    dipole_flux,
    dipole_flux_gradient,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def random_magnet(rng: np.random.Generator) -> MagnetSource:
    return MagnetSource(tuple(rng.uniform(-0.05, 0.05, 3)), rng.uniform(0.05, 2.0), rng.uniform(0.0, math.pi))


def fd_gradient(magnet: MagnetSource, point: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite differences of :func:`dipole_flux`, columns = d/dx_j."""
    h = rel_step * float(np.linalg.norm(point - np.asarray(magnet.position)))
    g = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        g[:, j] = (dipole_flux(magnet, point + e, 0.0) - dipole_flux(magnet, point - e, 0.0)) / (2 * h)
    return g


def check_gradient(n: int = 100, seed: int = 1, min_dist: float = 0.01) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        magnet = random_magnet(rng)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        point = np.asarray(magnet.position) + direction * rng.uniform(min_dist, 0.1)
        exact = dipole_flux_gradient(magnet, point, 0.0)
        approx = fd_gradient(magnet, point)
        worst = max(worst, float(np.max(np.abs(exact - approx)) / np.max(np.abs(exact))))
    return CheckResult("flux gradient vs finite differences", worst < 1e-5, f"worst relative error {worst:.2e} over {n} points")


def _default_marble() -> MarbleParams:
    return MarbleParams(chiV=DEFAULT_CHIV)


def _setup(kind: int) -> SetupConfig:
    return default_setup(kind).build()


def _feasible_pairs(kind: int, n: int, rng: np.random.Generator, marble):
    """Draw (x, F) with F inside the setup's reachable force interval at x."""
    setup = _setup(kind)
    out = []
    while len(out) < n:
        x = rng.uniform(-0.045, 0.045)
        if kind == 1:
            lo, hi = setup.coil.current_limits
            f_lo = axial_force(environment(setup, ActuationCommand(current=lo)), marble, x)
            f_hi = axial_force(environment(setup, ActuationCommand(current=hi)), marble, x)
        elif kind == 2:
            f_lo = axial_force(environment(setup, ActuationCommand(angles=(math.pi,))), marble, x)
            f_hi = axial_force(environment(setup, ActuationCommand(angles=(0.0,))), marble, x)
        else:
            f_lo = axial_force(environment(setup, ActuationCommand(angles=(math.pi / 2, 0.0))), marble, x)
            f_hi = axial_force(environment(setup, ActuationCommand(angles=(0.0, math.pi / 2))), marble, x)
        a, b = sorted((f_lo, f_hi))
        out.append((setup, x, rng.uniform(a, b)))
    return out


def check_roundtrips(n: int = 1000, seed: int = 2) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    marble = _default_marble()
    inverters = {1: invert_setup1, 2: invert_setup2, 3: invert_setup3}
    results = []
    for kind, inv in inverters.items():
        worst = 0.0
        for setup, x, f in _feasible_pairs(kind, n, rng, marble):
            cmd = inv(f, setup, marble, x)
            back = axial_force(environment(setup, cmd), marble, x)
            worst = max(worst, abs(back - f) / abs(f))
        results.append(CheckResult(f"setup {kind} inversion roundtrip", worst < 1e-9, f"worst relative error {worst:.2e}"))

    setup = _setup(3)
    worst = 0.0
    done = 0
    while done < n:
        xs = np.sort(rng.uniform(-0.045, 0.045, 2))
        if xs[1] - xs[0] < 0.005:
            continue
        c = rng.uniform(-1, 1, 2)
        env = environment(setup, ActuationCommand(angles=tuple(np.arccos(c))))
        f = [axial_force(env, marble, x) for x in xs]
        cmd = invert_two_fm(f, setup, (marble, marble), xs)
        env = environment(setup, cmd)
        back = [axial_force(env, marble, x) for x in xs]
        scale = max(abs(v) for v in f)
        worst = max(worst, max(abs(b - a) for a, b in zip(f, back)) / scale)
        done += 1
    results.append(CheckResult("two-marble allocation roundtrip", worst < 1e-9, f"worst relative error {worst:.2e}"))
    return results


def check_structural_points() -> list[CheckResult]:
    marble = _default_marble()
    coil = HelmholtzCoil()
    x = 0.01
    env90 = MagneticEnvironment(coil, 1.5, (MagnetSource.on_axis(-0.06, 0.3, math.pi / 2),))
    f90 = axial_force(env90, marble, x)
    pair = (MagnetSource.on_axis(-0.06, 0.15), MagnetSource.on_axis(0.06, 0.15))
    f_center = axial_force(MagneticEnvironment(coil, 3.0, pair), marble, 0.0)
    worst = 0.0
    for theta in np.linspace(0.0, math.pi, 37):
        a = axial_force(MagneticEnvironment(coil, 1.5, (MagnetSource.on_axis(-0.06, 0.3, theta),)), marble, x)
        b = axial_force(MagneticEnvironment(coil, 1.5, (MagnetSource.on_axis(-0.06, 0.3, math.pi - theta),)), marble, x)
        worst = max(worst, abs(a + b))
    f0 = axial_force(MagneticEnvironment(coil, 1.5, (MagnetSource.on_axis(-0.06, 0.3),)), marble, x)
    return [
        CheckResult("setup 2 zero force at 90 deg", abs(f90) <= 1e-16 * abs(f0), f"F(90) = {f90:.3e} N"),
        CheckResult("setup 3 zero force at centre", f_center == 0.0, f"F(0) = {f_center:.3e} N"),
        CheckResult("setup 2 antisymmetry F(t) = -F(180-t)", worst <= 1e-15 * abs(f0), f"worst |F(t)+F(180-t)| = {worst:.3e} N"),
    ]


def check_integrator() -> list[CheckResult]:
    results = []
    p = MarbleParams(beta=0.0)
    force = 1e-6
    plant = Plant.single(p, 0.0, dt=1e-4, workspace=(-1.0, 1.0))
    for _ in range(10000):
        plant = step(plant, [force])
    exact = 0.5 * force / p.mass * 1.0**2
    rel = abs(plant.states[0].x - exact) / exact
    results.append(CheckResult("frictionless constant force", rel < 1e-8, f"relative error {rel:.2e}"))

    p = MarbleParams()
    tau = p.mass / p.drag_coefficient
    plant = Plant.single(p, 0.0, dt=tau / 100, workspace=(-1.0, 1.0))
    force = 1e-7
    for _ in range(1000):
        plant = step(plant, [force])
    v_term = force / p.drag_coefficient
    rel = abs(plant.states[0].v - v_term) / v_term
    results.append(CheckResult("terminal velocity", rel < 1e-3, f"relative error {rel:.2e}"))

    order = rk4_observed_order()
    results.append(CheckResult("RK4 observed order", order >= 3.9, f"{order:.3f}"))
    return results


def smooth_forcing(t: float, x: float) -> float:
    return 2e-7 * math.sin(3.0 * t) - 2e-4 * x


def rk4_observed_order(t_end: float = 1.0, steps=(25, 50, 100)) -> float:
    p = MarbleParams()
    finals = []
    for n in steps:
        h = t_end / n
        plant = Plant.single(p, 0.001, 0.0, dt=h, workspace=(-1.0, 1.0))
        for _ in range(n):
            plant = step(plant, [smooth_forcing])
        finals.append(plant.states[0].x)
    e1 = abs(finals[0] - finals[1])
    e2 = abs(finals[1] - finals[2])
    return math.log2(e1 / e2)


def run_all() -> list[CheckResult]:
    out = [check_gradient()]
    out += check_roundtrips()
    out += check_structural_points()
    out += check_integrator()
    return out
