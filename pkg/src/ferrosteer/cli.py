"""Command-line entry point.

Exit status: 0 success, 1 scenario failure (or a failed validation check),
2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import harness, trajectories
from .config import (
    ScenarioConfig,
    carry_config,
    default_config,
    default_setup,
    parse_override,
    two_fm_config,
)
from .errors import ConfigError, FerroSteerError, ScenarioFailed

OUT_ENV = "FERROSTEER_OUT"
DEFAULT_OUT = "ferrosteer_out"


def _common(p: argparse.ArgumentParser, *, setup_default: Optional[int] = None) -> None:
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--preset", help="named reference trajectory (see `presets`)")
    p.add_argument("--setup", type=int, choices=(1, 2, 3), default=setup_default, help="actuation setup")
    p.add_argument("--seed", type=int, help="measurement-noise seed")
    p.add_argument("--duration", type=float, help="run length [s]")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--plot", action="store_true", help="also write an SVG figure")
    p.add_argument("overrides", nargs="*", metavar="KEY=VALUE", help="dotted config overrides, e.g. controller.kp=3e-4")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ferrosteer", description="Ferrofluid-marble steering simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="single-marble closed-loop scenario"))
    _common(sub.add_parser("two-fm", help="two marbles steered by the two-magnet setup"))
    _common(sub.add_parser("carry", help="carry and dispense a passive marble"), setup_default=3)

    p = sub.add_parser("compare", help="run several setups on one trajectory")
    p.add_argument("--config", action="append", default=[], help="scenario file (repeatable)")
    p.add_argument("--preset", default="eq15")
    p.add_argument("--setups", type=int, nargs="+", default=[1, 2, 3], choices=(1, 2, 3))
    p.add_argument("--duration", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("sweep", help="MAE and energy versus sinusoid period")
    p.add_argument("--periods", type=float, nargs="+", default=[50.0, 20.0, 10.0, 6.0, 5.0])
    p.add_argument("--setups", type=int, nargs="+", default=[1, 2, 3], choices=(1, 2, 3))
    p.add_argument("--amplitude", type=float, default=0.03, help="[m]")
    p.add_argument("--cycles", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("calibrate", help="fit marble chiV to the 1.0-1.2 A setup-1 current band")
    p.add_argument("--config")
    p.add_argument("--out")

    sub.add_parser("validate", help="run the numerical oracle suite")
    sub.add_parser("presets", help="list the named trajectories")
    return parser


def _out_dir(args, cfg: Optional[ScenarioConfig] = None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg is not None and cfg.output.dir:
        return Path(cfg.output.dir)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def _load(args, base) -> ScenarioConfig:
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file {args.config} does not exist")
        cfg = ScenarioConfig.load(args.config)
        if args.setup is not None:
            cfg.setup = default_setup(args.setup)
    else:
        cfg = base()
    if args.preset:
        trajectories.preset(args.preset)
        cfg.trajectory = args.preset
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.duration is not None:
        cfg.run.duration = args.duration
    if getattr(args, "plot", False):
        cfg.output.plot = True
    overrides = dict(parse_override(o) for o in args.overrides)
    return cfg.with_overrides(overrides)


def _write_outputs(out: Path, traces, summary: dict, cfg: ScenarioConfig, title: str) -> None:
    if len(traces) == 1:
        harness.atomic_write(out / "trace.csv", harness.trace_to_csv(traces[0]))
    else:
        for i, tr in enumerate(traces, start=1):
            harness.atomic_write(out / f"trace_fm{i}.csv", harness.trace_to_csv(tr))
    harness.atomic_write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n")
    if cfg.output.plot:
        from .plots import plot_traces

        plot_traces(traces, out / "plot.svg", title)


def _scenario(args, base, title: str) -> int:
    cfg = _load(args, base)
    out = _out_dir(args, cfg)
    try:
        result = harness.simulate(cfg)
        status = "degraded" if any(m.degraded for m in result.metrics) else "ok"
        code = 0
    except ScenarioFailed as exc:
        result = exc.result
        status = "failed"
        code = 1
        print(f"scenario failed: {exc}", file=sys.stderr)
    summary = harness.result_summary(result, cfg, status)
    if any(result.traces):
        _write_outputs(out, [t for t in result.traces if t], summary, cfg, title)
    for i, m in enumerate(result.metrics, start=1):
        tag = f" FM{i}" if len(result.metrics) > 1 else ""
        print(f"{title}{tag}: MAE {m.mae * 1e3:.4f} mm, max |e| {m.max_abs_error * 1e3:.4f} mm, "
              f"energy {m.energy_proxy:.4g} A^2 s, saturation {m.saturation_fraction:.3f}")
    for e in result.events:
        print(f"  event {e['event']} at t = {e['t']:.3f} s")
    print(f"wrote {out}")
    return code


def _compare(args) -> int:
    if args.config:
        configs = []
        for path in args.config:
            if not Path(path).is_file():
                raise ConfigError(f"config file {path} does not exist")
            configs.append(ScenarioConfig.load(path))
    else:
        trajectories.preset(args.preset)
        configs = [default_config(k, args.preset) for k in args.setups]
    for cfg in configs:
        if args.duration is not None:
            cfg.run.duration = args.duration
        if args.seed is not None:
            cfg.run.seed = args.seed
    rows = harness.compare_setups(configs, jobs=args.jobs)
    print(harness.format_table(rows))
    out = _out_dir(args)
    harness.atomic_write(out / "comparison.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 1 if any(r["status"] == "failed" for r in rows) else 0


def _sweep(args) -> int:
    rows = harness.frequency_sweep(args.setups, args.periods, args.amplitude, args.cycles, jobs=args.jobs)
    print(harness.format_table(rows))
    out = _out_dir(args)
    harness.atomic_write(out / "sweep.json", json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 0


def _calibrate(args) -> int:
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file {args.config} does not exist")
        cfg = ScenarioConfig.load(args.config)
    else:
        cfg = default_config(1, "eq15")
    chiv, peak = harness.calibrate_chiv(cfg)
    cfg.plant.marbles[0].chiV = chiv
    print(f"chiV = {chiv:.6g} m^3 (peak setup-1 current {peak:.4f} A)")
    out = _out_dir(args)
    harness.atomic_write(out / "calibrated_setup1.json", json.dumps(cfg.to_dict(), indent=2) + "\n")
    return 0


def _validate() -> int:
    from .validation import run_all

    results = run_all()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def _presets() -> int:
    for name, (formula, _) in trajectories.PRESETS.items():
        print(f"{name:10s} {formula}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        if args.command == "run":
            return _scenario(args, lambda: default_config(args.setup or 1, "eq15"), f"setup {args.setup or 1}")
        if args.command == "two-fm":
            return _scenario(args, two_fm_config, "two-FM")
        if args.command == "carry":
            return _scenario(args, lambda: carry_config(args.setup or 3), "carry")
        if args.command == "compare":
            return _compare(args)
        if args.command == "sweep":
            return _sweep(args)
        if args.command == "calibrate":
            return _calibrate(args)
        if args.command == "validate":
            return _validate()
        return _presets()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FerroSteerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
