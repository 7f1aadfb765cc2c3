"""Closed-loop scenario runner, metrics and persistence."""

from __future__ import annotations

import hashlib
import math

import pytest

from ferrosteer import harness
from ferrosteer.config import MeasurementSection, carry_config, default_config, two_fm_config
from ferrosteer.errors import AllocationSingularError, ConfigError, ScenarioFailed
from ferrosteer.harness import TRACE_COLUMNS, TraceRecord, compute_metrics


def rec(t, x, x_d, current=None, theta1=None, theta2=None, saturated=False):
    return TraceRecord(t, x, x, x_d, 0.0, 0.0, current, theta1, theta2, saturated)


def noisy(cfg, seed=0, latency=1):
    out = cfg.with_overrides({"run.seed": seed})
    out.measurement = MeasurementSection(noise_std=5e-5, quantization=1e-4, latency=latency)
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


class TestMetrics:
    def test_perfect_tracking(self):
        m = compute_metrics([rec(0.0, 0.01, 0.01), rec(0.1, 0.02, 0.02)])
        assert m.mae == 0.0 and m.max_abs_error == 0.0

    def test_two_sample_mean(self):
        m = compute_metrics([rec(0.0, 0.001, 0.0), rec(0.1, 0.0, 0.003)])
        assert m.mae == pytest.approx(0.002, rel=1e-15)
        assert m.max_abs_error == pytest.approx(0.003)

    def test_constant_current_energy(self):
        trace = [rec(k * 0.1, 0.0, 0.0, current=2.0) for k in range(50)]
        assert compute_metrics(trace).energy_proxy == pytest.approx(2.0**2 * 5.0, rel=1e-12)

    def test_fixed_current_for_angle_rows(self):
        trace = [rec(k * 0.1, 0.0, 0.0, theta1=0.1 * k) for k in range(10)]
        m = compute_metrics(trace, fixed_current=3.0)
        assert m.energy_proxy == pytest.approx(9.0 * 1.0)
        assert m.command_travel == pytest.approx(0.9)

    def test_saturation_and_degraded(self):
        trace = [rec(k * 0.1, 0.0, 0.0, current=5.0, saturated=k < 6) for k in range(10)]
        m = compute_metrics(trace)
        assert m.saturation_fraction == pytest.approx(0.6)
        assert m.degraded

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_metrics([])


# ---------------------------------------------------------------------------
# Single-marble scenarios
# ---------------------------------------------------------------------------


class TestScenario:
    def test_regulator_holds(self):
        cfg = default_config(2, {"type": "constant", "x": 0.01}, duration=10.0)
        cfg = cfg.with_overrides({"setup.magnets.0.theta": math.pi / 2})
        _, m = harness.run_scenario(cfg)
        assert m.mae < 1e-6

    def test_trace_shape(self):
        trace, m = harness.run_scenario(default_config(1, duration=2.0))
        assert len(trace) == m.samples == 60
        ts = [r.t for r in trace]
        assert all(b > a for a, b in zip(ts, ts[1:]))
        assert ts[1] - ts[0] == pytest.approx(1 / 30)
        assert all(r.current is not None and r.theta1 is None for r in trace)
        assert m.mae <= m.max_abs_error and m.energy_proxy >= 0

    def test_rotating_trace_columns(self):
        trace, _ = harness.run_scenario(default_config(3, duration=1.0))
        assert all(r.current is None and r.theta1 is not None and r.theta2 is not None for r in trace)

    def test_deterministic(self):
        cfg = noisy(default_config(2, duration=5.0), seed=7)
        a, _ = harness.run_scenario(cfg)
        b, _ = harness.run_scenario(cfg)
        assert harness.trace_to_csv(a) == harness.trace_to_csv(b)

    def test_seed_changes_only_noise(self):
        a, _ = harness.run_scenario(noisy(default_config(1, duration=5.0), seed=1))
        b, _ = harness.run_scenario(noisy(default_config(1, duration=5.0), seed=2))
        assert [r.x_d for r in a] == [r.x_d for r in b]
        assert [r.x_meas for r in a] != [r.x_meas for r in b]

    @pytest.mark.parametrize("k", [0, 1, 3])
    def test_latency_shift(self, k):
        cfg = default_config(1, duration=3.0)
        cfg.measurement = MeasurementSection(latency=k)
        trace, _ = harness.run_scenario(cfg)
        for i in range(len(trace) - k):
            assert trace[i + k].x_meas == trace[i].x_true
        assert all(r.x_meas == trace[0].x_true for r in trace[:k])

    def test_saturation_flag_matches_clamp(self):
        cfg = default_config(1, duration=20.0).with_overrides({"plant.marbles.0.chiV": 1.5e-8})
        trace, m = harness.run_scenario(cfg)
        assert 0 < m.saturation_fraction < 1
        for r in trace:
            assert r.saturated == (abs(r.current) == 5.0)

    def test_failure_carries_partial_trace(self):
        cfg = default_config(1, {"type": "constant", "x": -0.057}, duration=20.0)
        cfg = cfg.with_overrides({"plant.workspace": [-0.058, 0.058], "plant.marbles.0.x0": 0.0})
        with pytest.raises(ScenarioFailed) as info:
            harness.run_scenario(cfg)
        partial = info.value.result
        assert 0 < len(partial.traces[0]) < cfg.run.ticks
        assert partial.metrics[0].samples == len(partial.traces[0])

    def test_wrong_mode(self):
        with pytest.raises(ConfigError):
            harness.run_scenario(two_fm_config(duration=1.0))
        with pytest.raises(ConfigError):
            harness.run_two_fm(default_config(3, duration=1.0))
        with pytest.raises(ConfigError):
            harness.run_carry(default_config(3, duration=1.0))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class TestPersistence:
    def test_csv_format(self, tmp_path):
        trace, m = harness.run_scenario(default_config(2, duration=2.0))
        path = tmp_path / "trace.csv"
        harness.atomic_write(path, harness.trace_to_csv(trace))
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        row = lines[1].split(",")
        assert row[6] == "" and row[8] == "" and row[7] != ""
        for cell in row[:6]:
            digits = cell.lstrip("-").split("e")[0].replace(".", "").lstrip("0")
            assert len(digits) <= 12

    def test_mae_recomputed_from_file(self, tmp_path):
        cfg = noisy(default_config(1, duration=10.0), seed=3)
        trace, m = harness.run_scenario(cfg)
        path = tmp_path / "trace.csv"
        path.write_text(harness.trace_to_csv(trace))
        back = harness.read_trace_csv(path)
        assert back == trace
        mae = math.fsum(abs(r.x_true - r.x_d) for r in back) / len(back)
        assert mae == pytest.approx(m.mae, rel=1e-12)

    def test_summary_json(self):
        cfg = default_config(1, duration=1.0)
        trace, m = harness.run_scenario(cfg)
        text = harness.summary_json(m, cfg)
        assert '"config_hash"' in text and '"seed": 0' in text and '"mae"' in text
        assert text == harness.summary_json(m, cfg)

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        harness.atomic_write(tmp_path / "a" / "b.txt", "hello")
        assert (tmp_path / "a" / "b.txt").read_text() == "hello"
        assert [p.name for p in (tmp_path / "a").iterdir()] == ["b.txt"]


# ---------------------------------------------------------------------------
# Comparison and sweep
# ---------------------------------------------------------------------------


class TestCompare:
    def test_needs_two(self):
        with pytest.raises(ConfigError):
            harness.compare_setups([default_config(1)])

    def test_same_trajectory(self):
        with pytest.raises(ConfigError):
            harness.compare_setups([default_config(1, "eq15"), default_config(2, "fig10")])

    def test_failed_row_does_not_stop_others(self):
        bad = default_config(1, {"type": "constant", "x": -0.057}, duration=5.0)
        bad = bad.with_overrides({"plant.workspace": [-0.058, 0.058], "plant.marbles.0.x0": 0.0})
        good = default_config(3, {"type": "constant", "x": -0.057}, duration=1.0)
        good = good.with_overrides({"plant.marbles.0.x0": 0.0})
        rows = harness.compare_setups([bad, good])
        assert rows[0]["status"] == "failed" and rows[1]["status"] in ("ok", "degraded")

    def test_sweep_table(self):
        rows = harness.frequency_sweep(setups=(1, 2), periods=(10.0,), amplitude=0.01)
        assert [(r["setup"], r["period_s"]) for r in rows] == [(1, 10.0), (2, 10.0)]
        table = harness.format_table(rows)
        assert "MAE[mm]" in table and len(table.splitlines()) == 3

    def test_parallel_matches_serial(self):
        cfgs = [default_config(k, duration=2.0) for k in (1, 2)]
        assert harness.compare_setups(cfgs, jobs=2) == harness.compare_setups(cfgs, jobs=1)


# ---------------------------------------------------------------------------
# Two marbles and carrying
# ---------------------------------------------------------------------------


class TestTwoFM:
    def test_coincident_start(self):
        cfg = two_fm_config(duration=1.0).with_overrides({"plant.marbles.0.x0": 0.01, "plant.marbles.1.x0": 0.01})
        with pytest.raises(AllocationSingularError):
            harness.run_two_fm(cfg)

    def test_mirrored_commands(self):
        ref = {"type": "sinusoid", "center": -0.02, "amplitude": 0.005, "period": 10.0}
        mirror = {"type": "sinusoid", "center": 0.02, "amplitude": -0.005, "period": 10.0}
        cfg = two_fm_config(duration=10.0).with_overrides({"trajectory": [ref, mirror]})
        traces, metrics = harness.run_two_fm(cfg)
        for r1, r2 in zip(*traces):
            assert r1.theta1 == pytest.approx(r1.theta2, abs=1e-9)
            assert r1.x_true == pytest.approx(-r2.x_true, abs=1e-12)
        assert metrics[0].mae == pytest.approx(metrics[1].mae, rel=1e-6)


class TestCarry:
    def test_passive_out_of_reach(self):
        carry = carry_config(duration=20.0).with_overrides(
            {"plant.marbles.1.x0": 0.2, "run.dispense_time": None}
        )
        trace, m, events = harness.run_carry(carry)
        assert not any(e["event"] == "attach" for e in events)
        plain_trace, plain = harness.run_scenario(default_config(3, "fig10", duration=20.0))
        assert m == plain
        assert trace == plain_trace

    def test_dispense_without_attach_is_harmless(self):
        carry = carry_config(duration=5.0).with_overrides({"plant.marbles.1.x0": 0.2, "run.dispense_time": 4.0})
        _, _, events = harness.run_carry(carry)
        assert [e["event"] for e in events] == ["dispense"]

    def test_capture_transient(self):
        base = carry_config(duration=15.0).with_overrides({"run.dispense_time": None})
        kicked = base.with_overrides({"plant.capture_force": 2e-6, "plant.capture_duration": 0.3})
        t0, _, e0 = harness.run_carry(base)
        t1, _, e1 = harness.run_carry(kicked)
        attach = e0[0]["t"]
        assert e0[0] == e1[0]
        after = [i for i, r in enumerate(t0) if r.t > attach + 0.1][0]
        assert t0[after].x_true != t1[after].x_true

    def test_result_summary_reports_events(self):
        cfg = carry_config(duration=15.0).with_overrides({"run.dispense_time": None})
        res = harness.simulate(cfg)
        summary = harness.result_summary(res, cfg, "ok")
        assert summary["events"][0]["event"] == "attach"
        assert "post_attach_mae" in summary


@pytest.mark.parametrize("kind,limit", [(1, 1e-3), (2, 2e-3), (3, 2e-3)])
def test_eq15_with_realistic_measurement(kind, limit):
    cfg = default_config(kind, "eq15")
    cfg.measurement = MeasurementSection.realistic()
    _, m = harness.run_scenario(cfg)
    assert m.mae <= limit and not m.degraded


def test_calibration_band():
    chiv, peak = harness.calibrate_chiv(default_config(1, duration=30.0))
    assert 1.0 <= peak <= 1.2
    assert chiv > 0


def test_trace_bytes_stable_across_runs():
    cfg = noisy(carry_config(duration=10.0))
    digests = {hashlib.sha256(harness.trace_to_csv(harness.run_carry(cfg)[0]).encode()).hexdigest() for _ in range(2)}
    assert len(digests) == 1
