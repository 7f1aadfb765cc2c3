"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (also collected into the
terminal summary) and then asserts at the criterion's own tolerance.
"""

from __future__ import annotations

import hashlib
import time

import pytest

from conftest import ACCEPTANCE_LINES
from ferrosteer import cli, harness
from ferrosteer.config import carry_config, default_config, two_fm_config
from ferrosteer.validation import check_gradient, check_integrator, check_roundtrips, check_structural_points


def report(number: int, name: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def eq15_runs():
    """Setup 1-3 on "eq15", zero measurement noise, 30 Hz, 50 s."""
    runs = {}
    for kind in (1, 2, 3):
        cfg = default_config(kind, "eq15")
        assert cfg.run.control_rate == 30.0 and cfg.run.duration == 50.0
        assert cfg.measurement.noise_std == 0.0
        (trace, metrics), wall = timed(harness.run_scenario, cfg)
        runs[kind] = (trace, metrics, wall)
    return runs


# ---------------------------------------------------------------------------
# Numerical oracles
# ---------------------------------------------------------------------------


def test_01_gradient_oracle():
    result, wall = timed(check_gradient, 100, 1, 0.01)
    report(1, "flux gradient vs finite differences", result.passed and wall < 1.0,
           f"{result.detail}, {wall:.3f} s (limit 1e-5, 1 s)")


def test_02_inversion_roundtrips():
    results, wall = timed(check_roundtrips, 1000)
    detail = "; ".join(f"{r.name} {r.detail.split()[-1]}" for r in results)
    report(2, "inversion roundtrips x1000", all(r.passed for r in results) and wall < 5.0,
           f"{detail}; {wall:.2f} s (limit 1e-9, 5 s)")


def test_03_structural_points():
    results = check_structural_points()
    report(3, "exact structural points", all(r.passed for r in results), "; ".join(r.detail for r in results))


def test_04_integrator_oracles():
    results = check_integrator()
    report(4, "integrator oracles", all(r.passed for r in results),
           "; ".join(f"{r.name} {r.detail}" for r in results))


# ---------------------------------------------------------------------------
# Closed-loop targets
# ---------------------------------------------------------------------------


def test_05_eq15_tracking(eq15_runs):
    limits = {1: 1.0e-3, 2: 2.0e-3, 3: 2.0e-3}
    ok = all(eq15_runs[k][1].mae <= limits[k] and eq15_runs[k][2] < 10.0 for k in limits)
    detail = ", ".join(
        f"setup {k} MAE {eq15_runs[k][1].mae * 1e3:.3f} mm (<= {limits[k] * 1e3:.0f}) in {eq15_runs[k][2]:.1f} s"
        for k in limits
    )
    report(5, "eq15 tracking", ok, detail)


def test_06_calibrated_current_band():
    chiv, peak = harness.calibrate_chiv(default_config(1, "eq15"))
    cfg = default_config(1, "eq15").with_overrides({"plant.marbles.0.chiV": chiv})
    trace, _ = harness.run_scenario(cfg)
    rerun_peak = harness.peak_current(trace)
    report(6, "calibrated setup-1 peak current", 1.0 <= rerun_peak <= 1.3,
           f"chiV {chiv:.4g} m^3, peak {rerun_peak:.3f} A (band 1.0-1.3 A)")


def test_07_energy_ordering(eq15_runs):
    rows = harness.compare_setups([default_config(k, "eq15") for k in (1, 2, 3)])
    print(harness.format_table(rows))
    e = {r["setup"]: r["energy_a2s"] for r in rows}
    assert all(e[k] == eq15_runs[k][1].energy_proxy for k in e)
    report(7, "energy ordering", e[1] < e[2] and e[1] < e[3],
           f"setup 1 {e[1]:.4g}, setup 2 {e[2]:.4g}, setup 3 {e[3]:.4g} A^2 s")


def test_08_two_marbles():
    cfg = two_fm_config(duration=100.0)
    res = harness.simulate(cfg)
    maes = [m.mae for m in res.metrics]
    singular = res.info["allocation_singular_events"]
    report(8, "two-marble tracking", all(m <= 3e-3 for m in maes) and singular == 0,
           f"MAE {maes[0] * 1e3:.3f} / {maes[1] * 1e3:.3f} mm (<= 3), {singular} singular events")


def test_09_carry():
    cfg = carry_config()
    trace, _, events = harness.run_carry(cfg)
    attach = [e["t"] for e in events if e["event"] == "attach"]
    detach = [e["t"] for e in events if e["event"] == "detach"]
    post = harness.window_mae(trace, attach[0], cfg.run.dispense_time) if attach else float("inf")
    ok = bool(attach) and post <= 3e-3 and bool(detach) and detach[0] >= cfg.run.dispense_time
    report(9, "carry and dispense", ok,
           f"attach at {attach[0] if attach else None} s, post-attach MAE {post * 1e3:.3f} mm (<= 3), "
           f"detach at {detach[0] if detach else None} s")


def test_10_determinism(tmp_path):
    digests = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        code = cli.main(["carry", "--duration", "20", "--seed", "11", "--out", str(out),
                         "measurement.noise_std=5e-5", "measurement.quantization=1e-4", "measurement.latency=1"])
        assert code == 0
        digests.append(tuple(hashlib.sha256((out / n).read_bytes()).hexdigest() for n in ("trace.csv", "summary.json")))
    report(10, "byte-identical reruns", digests[0] == digests[1],
           f"trace sha256 {digests[0][0][:12]}, summary sha256 {digests[0][1][:12]}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
