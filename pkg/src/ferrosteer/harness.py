"""Closed-loop scenario runner, metrics and trace persistence.

One control tick: measure the marble (truth delayed, noised, quantised),
evaluate the reference, compute and invert the desired force, then hold the
command over the physics sub-steps while the force is re-evaluated at the
marble's instantaneous position.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import trajectories
from .config import ScenarioConfig, default_config
from .control import (
    ActuationCommand,
    ControllerState,
    SetupKind,
    control_step,
    environment,
    limit_slew,
)
from .dynamics import MarbleState, Plant, step, try_attach, try_detach
from .errors import (
    AllocationSingularError,
    ConfigError,
    FerroSteerError,
    IntegrationDivergedError,
    NoAuthorityError,
    ScenarioFailed,
    SingularityError,
)
from .magnetics import axial_force

TRACE_COLUMNS = (
    "t_s",
    "x_true_m",
    "x_meas_m",
    "x_d_m",
    "f_des_n",
    "f_applied_n",
    "cmd_current_a",
    "cmd_theta1_rad",
    "cmd_theta2_rad",
    "saturated",
)


def _r12(v: Optional[float]) -> Optional[float]:
    """Round to the 12 significant digits written to trace files."""
    if v is None:
        return None
    return float(f"{v:.12g}")


@dataclass(frozen=True)
class TraceRecord:
    """One control tick for one marble; floats are stored as persisted."""

    t: float
    x_true: float
    x_meas: float
    x_d: float
    f_des: float
    f_applied: float
    current: Optional[float] = None
    theta1: Optional[float] = None
    theta2: Optional[float] = None
    saturated: bool = False

    @classmethod
    def make(cls, t, x_true, x_meas, x_d, f_des, f_applied, command: ActuationCommand) -> "TraceRecord":
        angles = list(command.angles) + [None, None]
        return cls(
            _r12(t), _r12(x_true), _r12(x_meas), _r12(x_d), _r12(f_des), _r12(f_applied),
            _r12(command.current), _r12(angles[0]), _r12(angles[1]), bool(command.saturated),
        )


@dataclass(frozen=True)
class Metrics:
    mae: float
    max_abs_error: float
    energy_proxy: float
    command_travel: float
    settled: bool
    saturation_fraction: float = 0.0
    degraded: bool = False
    samples: int = 0


@dataclass
class ScenarioResult:
    traces: list
    metrics: list
    events: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def trace(self) -> list:
        return self.traces[0]


def compute_metrics(
    trace: Sequence[TraceRecord],
    *,
    fixed_current: Optional[float] = None,
    period: Optional[float] = None,
    settle_window: float = 0.1,
    settle_tol: float = 1e-3,
    saturation_limit: float = 0.5,
) -> Metrics:
    """Aggregate a trace.

    ``energy_proxy`` sums ``I^2 * period`` per row, using ``fixed_current``
    for rows that carry no coil current (rotating setups). ``period`` is
    inferred from the first two timestamps when omitted. The run counts as
    settled when every error over the final ``settle_window`` fraction of
    rows is within ``settle_tol``.
    """
    if not trace:
        raise ValueError("cannot compute metrics of an empty trace")
    if period is None:
        if len(trace) < 2:
            raise ValueError("period is required for a single-row trace")
        period = trace[1].t - trace[0].t
    errors = [abs(r.x_true - r.x_d) for r in trace]
    mae = math.fsum(errors) / len(errors)
    energy = 0.0
    for r in trace:
        current = r.current if r.current is not None else fixed_current
        if current is not None:
            energy += current * current * period
    travel = 0.0
    for prev, cur in zip(trace, trace[1:]):
        for a, b in ((prev.theta1, cur.theta1), (prev.theta2, cur.theta2)):
            if a is not None and b is not None:
                travel += abs(b - a)
    tail = max(1, int(math.ceil(settle_window * len(trace))))
    settled = max(errors[-tail:]) <= settle_tol
    sat = sum(r.saturated for r in trace) / len(trace)
    return Metrics(
        mae=mae,
        max_abs_error=max(errors),
        energy_proxy=energy,
        command_travel=travel,
        settled=settled,
        saturation_fraction=sat,
        degraded=sat > saturation_limit,
        samples=len(trace),
    )


class _Sensor:
    """Delayed, noisy, quantised position measurement for one marble."""

    def __init__(self, latency: int, noise_std: float, quantization: float, rng: np.random.Generator):
        self.latency = latency
        self.noise_std = noise_std
        self.quantization = quantization
        self.rng = rng
        self.history: deque = deque(maxlen=latency + 1)

    def measure(self, x_true: float) -> float:
        self.history.append(x_true)
        x = self.history[0]
        noise = self.rng.standard_normal()
        x = x + self.noise_std * noise
        if self.quantization > 0:
            x = round(x / self.quantization) * self.quantization
        return x


def _force_fn(env, params):
    if params.chiV == 0.0:
        return 0.0
    return lambda t, x: axial_force(env, params, x)


class _Loop:
    """State of one running scenario."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.mode = cfg.run.mode
        self.setup = cfg.setup.build()
        self.params = [m.build() for m in cfg.plant.marbles]
        self.specs = cfg.trajectory_specs()
        self._validate()
        self.controlled = list(range(len(self.specs)))
        self.gains = [cfg.controller.gains_for(self.params[i]) for i in self.controlled]
        self.period = cfg.run.period
        self.n_sub = cfg.run.substeps
        self.h = self.period / self.n_sub
        states = []
        for i, m in enumerate(cfg.plant.marbles):
            x0 = m.x0
            if x0 is None:
                if i >= len(self.specs):
                    raise ConfigError(f"marble {i} has no reference; give plant.marbles[{i}].x0")
                x0 = trajectories.evaluate(self.specs[i], 0.0)[0]
            states.append(MarbleState(float(x0), float(m.v0), 0.0))
        self.plant = Plant(
            tuple(self.params),
            tuple(states),
            workspace=tuple(cfg.plant.workspace),
            dt=self.h,
            detach_threshold=cfg.plant.detach_threshold,
        )
        rng = np.random.default_rng(cfg.run.seed)
        meas = cfg.measurement
        self.sensors = [_Sensor(meas.latency, meas.noise_std, meas.quantization, rng) for _ in self.controlled]
        self.traces = [[] for _ in self.controlled]
        self.events: list[dict] = []
        self.singular_ticks = 0
        self.singular_events = 0
        self.attach_time: Optional[float] = None

    def _validate(self):
        mode, n_traj, n_marbles = self.mode, len(self.specs), len(self.params)
        if mode == "single" and (n_traj != 1 or n_marbles != 1):
            raise ConfigError("single mode needs one marble and one trajectory")
        if mode == "two_fm":
            if self.setup.kind is not SetupKind.DUAL_ROTATING:
                raise ConfigError("two_fm mode needs setup kind 3")
            if n_traj != 2 or n_marbles != 2 or not all(p.magnetic for p in self.params):
                raise ConfigError("two_fm mode needs two magnetic marbles and two trajectories")
        if mode == "carry":
            if n_traj != 1 or n_marbles != 2:
                raise ConfigError("carry mode needs one trajectory, a magnetic marble and a passive marble")
            if not self.params[0].magnetic or self.params[1].magnetic:
                raise ConfigError("carry mode: marble 0 must be magnetic and marble 1 passive")
        if any(p.magnetic and p.chiV == 0.0 for p in self.params):
            raise ConfigError("a magnetic marble needs chiV > 0")

    # ------------------------------------------------------------------

    def _dispense_command(self, previous: Optional[ActuationCommand]) -> ActuationCommand:
        """Maximum force away from the passive marble."""
        att = self.plant.attachment
        toward_right = att is not None and att.offset < 0
        if self.setup.kind is SetupKind.VARIABLE_CURRENT:
            lo, hi = self.setup.coil.current_limits
            magnet_left = self.setup.magnets[0].x < self.plant.states[0].x
            push_right = toward_right == magnet_left
            return ActuationCommand(current=hi if push_right else lo, saturated=True)
        if self.setup.kind is SetupKind.SINGLE_ROTATING:
            magnet_left = self.setup.magnets[0].x < self.plant.states[0].x
            target = (0.0,) if toward_right == magnet_left else (math.pi,)
        else:
            target = (0.0, math.pi) if toward_right else (math.pi, 0.0)
        cmd = ActuationCommand(angles=target, saturated=True)
        prev = previous.angles if previous is not None else tuple(m.theta for m in self.setup.magnets)
        return limit_slew(cmd, prev, self.setup.slew_rate, self.period)

    def run(self) -> ScenarioResult:
        cfg = self.cfg
        cstates = [ControllerState() for _ in self.controlled]
        previous: Optional[ActuationCommand] = None
        dispensing = False
        for k in range(cfg.run.ticks):
            t = k * self.period
            x_true = [self.plant.states[i].x for i in self.controlled]
            x_meas = [s.measure(x) for s, x in zip(self.sensors, x_true)]
            refs = [trajectories.evaluate(spec, t) for spec in self.specs]
            if self.mode == "carry" and cfg.run.dispense_time is not None and t >= cfg.run.dispense_time:
                if not dispensing:
                    self.events.append({"event": "dispense", "t": _r12(t)})
                    dispensing = True
                command = self._dispense_command(previous)
            else:
                command, cstates = self._control(cstates, x_meas, refs, previous)
            env = environment(self.setup, command)
            fns = [_force_fn(env, p) for p in self.params]
            if self.mode == "carry" and self.cfg.plant.capture_force:
                fns[0] = self._with_capture(fns[0])
            for j, i in enumerate(self.controlled):
                f_applied = axial_force(env, self.params[i], x_true[j])
                f_des = command.f_des[j] if command.f_des else math.nan
                self.traces[j].append(
                    TraceRecord.make(t, x_true[j], x_meas[j], refs[j][0], f_des, f_applied, command)
                )
            for _ in range(self.n_sub):
                self.plant = step(self.plant, fns)
                if self.mode == "carry":
                    self._contact(env)
            previous = command
        return self._result()

    def _control(self, cstates, x_meas, refs, previous):
        if self.mode == "two_fm":
            try:
                command, new = control_step(
                    self.setup, self.gains, tuple(cstates), x_meas, refs, self.period, self.params, previous
                )
            except AllocationSingularError:
                self.singular_ticks += 1
                self.singular_events += 1
                if self.singular_ticks > self.cfg.run.singular_window or previous is None:
                    raise
                return replace(previous, rate_limited=False), cstates
            self.singular_ticks = 0
            return command, list(new)
        command, new = control_step(
            self.setup, self.gains[0], cstates[0], x_meas[0], refs[0], self.period, self.params[0], previous
        )
        return command, [new]

    def _with_capture(self, fn):
        force = self.cfg.plant.capture_force
        duration = self.cfg.plant.capture_duration

        def wrapped(t, x):
            base = fn(t, x) if callable(fn) else fn
            att = self.plant.attachment
            if att is not None and self.attach_time is not None and t - self.attach_time < duration:
                base += math.copysign(force, att.offset)
            return base

        return wrapped

    def _contact(self, env):
        plant = self.plant
        if plant.attachment is None:
            attached = try_attach(plant)
            if attached.attachment is not None:
                self.attach_time = plant.t
                self.events.append({"event": "attach", "t": _r12(plant.t)})
            self.plant = attached
        else:
            f = axial_force(env, self.params[0], plant.states[0].x)
            detached = try_detach(plant, f)
            if detached.attachment is None:
                self.events.append({"event": "detach", "t": _r12(plant.t), "force_n": _r12(f)})
            self.plant = detached

    def metrics(self) -> list[Metrics]:
        fixed = self.setup.fixed_current if self.setup.rotating else None
        return [
            compute_metrics(
                tr,
                fixed_current=fixed,
                period=self.period,
                settle_window=self.cfg.run.settle_window,
                settle_tol=self.cfg.run.settle_tol,
                saturation_limit=self.cfg.run.saturation_fraction,
            )
            for tr in self.traces
            if tr
        ]

    def _result(self) -> ScenarioResult:
        info = {
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.run.seed,
            "physics_dt": self.h,
            "allocation_singular_events": self.singular_events,
        }
        return ScenarioResult(self.traces, self.metrics(), self.events, info)

    def partial(self) -> ScenarioResult:
        return self._result()


def simulate(config: ScenarioConfig) -> ScenarioResult:
    """Run any mode and return every trace, metric and event.

    Raises :class:`ScenarioFailed` (carrying the partial result) on plant
    divergence, persistent allocation singularity, loss of force authority
    or a marble entering a magnet's exclusion zone.
    """
    loop = _Loop(config)
    try:
        return loop.run()
    except (IntegrationDivergedError, AllocationSingularError, SingularityError, NoAuthorityError) as exc:
        partial = loop.partial()
        err = ScenarioFailed(f"{type(exc).__name__}: {exc}", trace=partial.traces, metrics=partial.metrics)
        err.result = partial
        raise err from exc


def run_scenario(config: ScenarioConfig) -> tuple[list[TraceRecord], Metrics]:
    if config.run.mode != "single":
        raise ConfigError("run_scenario handles single-marble configs; use run_two_fm or run_carry")
    res = simulate(config)
    return res.traces[0], res.metrics[0]


def run_two_fm(config: ScenarioConfig) -> tuple[list, list]:
    if config.run.mode != "two_fm":
        raise ConfigError("run_two_fm needs run.mode = 'two_fm'")
    pos = [m.x0 for m in config.plant.marbles]
    if pos[0] is not None and pos[0] == pos[1]:
        raise AllocationSingularError("marbles start at the same position")
    specs = config.trajectory_specs()
    x0 = [p if p is not None else trajectories.evaluate(s, 0.0)[0] for p, s in zip(pos, specs)]
    if x0[0] == x0[1]:
        raise AllocationSingularError("marbles start at the same position")
    res = simulate(config)
    return res.traces, res.metrics


def run_carry(config: ScenarioConfig) -> tuple[list, Metrics, list]:
    if config.run.mode != "carry":
        raise ConfigError("run_carry needs run.mode = 'carry'")
    res = simulate(config)
    return res.traces[0], res.metrics[0], res.events


def window_mae(trace: Sequence[TraceRecord], t_start: float = 0.0, t_end: float = math.inf) -> float:
    """MAE over rows with ``t_start <= t < t_end``."""
    errs = [abs(r.x_true - r.x_d) for r in trace if t_start <= r.t < t_end]
    if not errs:
        raise ValueError("no trace rows in the requested window")
    return math.fsum(errs) / len(errs)


def peak_current(trace: Sequence[TraceRecord]) -> float:
    return max(abs(r.current) for r in trace if r.current is not None)


# ----------------------------------------------------------------------
# Comparisons and sweeps
# ----------------------------------------------------------------------


def _row_for(config: ScenarioConfig) -> dict:
    row = {
        "setup": config.setup.kind,
        "trajectory": _trajectory_label(config.trajectory),
    }
    try:
        _, m = run_scenario(config)
    except ScenarioFailed as exc:
        row.update(status="failed", error=str(exc))
        return row
    row.update(
        status="degraded" if m.degraded else "ok",
        mae_m=m.mae,
        max_abs_error_m=m.max_abs_error,
        energy_a2s=m.energy_proxy,
        saturation_fraction=m.saturation_fraction,
        command_travel_rad=m.command_travel,
    )
    return row


def _trajectory_label(traj) -> str:
    if isinstance(traj, str):
        return traj
    return json.dumps(traj, sort_keys=True)


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def compare_setups(configs: Sequence[ScenarioConfig], jobs: int = 1) -> list[dict]:
    """Run each config and tabulate tracking and energy per setup.

    All configs must share one trajectory. A failing scenario yields a
    ``status = "failed"`` row; the others still run.
    """
    configs = list(configs)
    if len(configs) < 2:
        raise ConfigError("a comparison needs at least two configs")
    specs = {json.dumps(trajectories.to_dict(c.trajectory_specs()[0]), sort_keys=True) for c in configs}
    if len(specs) != 1:
        raise ConfigError("compared configs must share the same trajectory")
    return _map(_row_for, configs, jobs)


def frequency_sweep(
    setups: Iterable[int] = (1, 2, 3),
    periods: Iterable[float] = (50.0, 20.0, 10.0, 6.0, 5.0),
    amplitude: float = 0.03,
    cycles: float = 1.0,
    base: Optional[dict] = None,
    jobs: int = 1,
) -> list[dict]:
    """Sinusoid tracking on every setup at every period.

    Each run lasts ``cycles`` periods (at least 10 s). ``base`` maps setup
    kind to a config to start from.
    """
    configs = []
    for period in periods:
        for kind in setups:
            cfg = base[kind] if base and kind in base else default_config(kind)
            cfg = ScenarioConfig.from_dict(cfg.to_dict())
            cfg.trajectory = {"type": "sinusoid", "amplitude": amplitude, "period": float(period)}
            cfg.run.duration = max(10.0, cycles * period)
            configs.append(cfg)
    rows = _map(_row_for, configs, jobs)
    for row, cfg in zip(rows, configs):
        row["period_s"] = cfg.trajectory["period"]
        row["frequency_hz"] = 1.0 / cfg.trajectory["period"]
    return rows


def format_table(rows: Sequence[dict]) -> str:
    cols = [
        ("setup", "setup", "{}"),
        ("period_s", "period[s]", "{:.3g}"),
        ("mae_m", "MAE[mm]", "{:.4f}"),
        ("max_abs_error_m", "max|e|[mm]", "{:.4f}"),
        ("energy_a2s", "energy[A^2 s]", "{:.4g}"),
        ("saturation_fraction", "sat", "{:.3f}"),
        ("status", "status", "{}"),
    ]
    present = [c for c in cols if any(c[0] in r for r in rows)]
    header = [c[1] for c in present]
    body = []
    for r in rows:
        line = []
        for key, _, fmt in present:
            v = r.get(key)
            if v is None:
                line.append("-")
            elif key in ("mae_m", "max_abs_error_m"):
                line.append(fmt.format(v * 1e3))
            else:
                line.append(fmt.format(v))
        body.append(line)
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    out = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    out += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(out)


# ----------------------------------------------------------------------
# Calibration
# ----------------------------------------------------------------------


def calibrate_chiv(
    config: Optional[ScenarioConfig] = None,
    band: tuple[float, float] = (1.0, 1.2),
    bracket: tuple[float, float] = (1e-10, 1e-6),
    max_iter: int = 40,
) -> tuple[float, float]:
    """Find a marble chiV whose setup-1 run peaks inside ``band`` amperes.

    Peak coil current falls as chiV grows (the same force needs less flux),
    so a bisection in log(chiV) converges. Returns ``(chiV, peak_current)``.
    """
    if config is None:
        config = default_config(1, "eq15")
    if config.setup.kind != 1:
        raise ConfigError("calibration runs on setup 1")
    target = 0.5 * (band[0] + band[1])

    def peak(chiv: float) -> float:
        cfg = ScenarioConfig.from_dict(config.to_dict())
        cfg.plant.marbles[0].chiV = chiv
        trace, _ = run_scenario(cfg)
        return peak_current(trace)

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        chiv = math.exp(mid)
        p = peak(chiv)
        best = (chiv, p)
        if band[0] <= p <= band[1]:
            return best
        if p > target:
            lo = mid
        else:
            hi = mid
    raise FerroSteerError(f"calibration did not reach the band {band}; last chiV={best[0]:.4g}, peak={best[1]:.4g} A")


# ----------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    return f"{v:.12g}"


def trace_to_csv(trace: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in trace:
        w.writerow([
            _fmt(r.t), _fmt(r.x_true), _fmt(r.x_meas), _fmt(r.x_d), _fmt(r.f_des), _fmt(r.f_applied),
            _fmt(r.current), _fmt(r.theta1), _fmt(r.theta2), _fmt(r.saturated),
        ])
    return buf.getvalue()


def read_trace_csv(path) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        rows = []
        for line in reader:
            opt = [float(v) if v != "" else None for v in line[6:9]]
            rows.append(TraceRecord(
                float(line[0]), float(line[1]), float(line[2]), float(line[3]),
                float(line[4]), float(line[5]), opt[0], opt[1], opt[2], line[9] == "1",
            ))
        return rows


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary_dict(metrics: Metrics, config: ScenarioConfig, extra: Optional[dict] = None) -> dict:
    out = asdict(metrics)
    out["config_hash"] = config.config_hash()
    out["seed"] = config.run.seed
    if extra:
        out.update(extra)
    return out


def summary_json(metrics: Metrics, config: ScenarioConfig, extra: Optional[dict] = None) -> str:
    return json.dumps(summary_dict(metrics, config, extra), indent=2, sort_keys=True, allow_nan=False) + "\n"


def result_summary(result: ScenarioResult, config: ScenarioConfig, status: str) -> dict:
    """Summary of any mode: status, run info, metrics (per marble for two-FM), events."""
    out = {"status": status, "mode": config.run.mode}
    out.update(result.info)
    if len(result.metrics) == 1:
        out.update(asdict(result.metrics[0]))
    else:
        out["marbles"] = [asdict(m) for m in result.metrics]
    if result.events:
        out["events"] = result.events
    attach = [e["t"] for e in result.events if e["event"] == "attach"]
    if config.run.mode == "carry" and attach and result.traces[0]:
        end = config.run.dispense_time if config.run.dispense_time is not None else math.inf
        try:
            out["post_attach_mae"] = window_mae(result.traces[0], attach[0], end)
        except ValueError:
            pass
    return out
