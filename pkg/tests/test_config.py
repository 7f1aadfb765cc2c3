"""Scenario config parsing, overrides and hashing."""

from __future__ import annotations

import json

import pytest

from ferrosteer.config import (
    MeasurementSection,
    RunSection,
    ScenarioConfig,
    apply_override,
    carry_config,
    default_config,
    parse_override,
    two_fm_config,
)
from ferrosteer.errors import ConfigError


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class TestParse:
    @pytest.mark.parametrize("factory", [lambda: default_config(1), lambda: default_config(3, "fig9a"),
                                         two_fm_config, carry_config])
    def test_roundtrip(self, factory, tmp_path):
        cfg = factory()
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        again = ScenarioConfig.load(path)
        assert again.to_dict() == cfg.to_dict()
        assert again.config_hash() == cfg.config_hash()

    def test_unknown_top_level(self):
        data = default_config(1).to_dict()
        data["extras"] = {}
        with pytest.raises(ConfigError, match="extras"):
            ScenarioConfig.from_dict(data)

    @pytest.mark.parametrize(
        "section,key", [("run", "speed"), ("controller", "kd"), ("measurement", "blur"), ("output", "fmt")]
    )
    def test_unknown_nested(self, section, key):
        data = default_config(1).to_dict()
        data[section][key] = 1
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(data)

    def test_unknown_in_list_items(self):
        data = default_config(1).to_dict()
        data["plant"]["marbles"][0]["colour"] = "black"
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(data)
        data = default_config(1).to_dict()
        data["setup"]["magnets"][0]["grade"] = "N52"
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(data)

    def test_setup_required(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({"run": {}})

    def test_setup_kind_by_name(self):
        data = default_config(2).to_dict()
        data["setup"]["kind"] = "single_rotating"
        assert ScenarioConfig.from_dict(data).setup.kind == 2

    @pytest.mark.parametrize(
        "path,value",
        [("run.mode", "dance"), ("run.duration", 0), ("run.control_rate", -1), ("run.dt", 1.0),
         ("measurement.latency", 1.5), ("measurement.noise_std", -1), ("setup.kind", 4),
         ("plant.workspace", [0.05, -0.05]), ("trajectory", "eq99")],
    )
    def test_invalid_values(self, path, value):
        data = default_config(1).to_dict()
        apply_override(data, path, value)
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict(data)

    def test_bad_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ScenarioConfig.load(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            ScenarioConfig.load(bad)


# ---------------------------------------------------------------------------
# Overrides and hashing
# ---------------------------------------------------------------------------


class TestOverrides:
    def test_parse_values(self):
        assert parse_override("controller.kp=3e-4") == ("controller.kp", 3e-4)
        assert parse_override("trajectory=fig10") == ("trajectory", "fig10")
        assert parse_override("plant.workspace=[-0.04, 0.04]") == ("plant.workspace", [-0.04, 0.04])
        with pytest.raises(ConfigError):
            parse_override("controller.kp")

    def test_nested_and_indexed(self):
        cfg = default_config(1).with_overrides({"controller.kp": 5e-4, "plant.marbles.0.chiV": 2e-7})
        assert cfg.controller.kp == 5e-4
        assert cfg.plant.marbles[0].chiV == 2e-7

    @pytest.mark.parametrize("key", ["controller.kd", "plant.marbles.3.mass", "plant.marbles.x.mass", "run.seed.x"])
    def test_unknown_override(self, key):
        with pytest.raises(ConfigError):
            default_config(1).with_overrides({key: 1})

    def test_hash_ignores_output(self):
        a = default_config(1)
        b = a.with_overrides({"output.dir": "/tmp/elsewhere", "output.plot": True})
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != a.with_overrides({"run.seed": 3}).config_hash()


# ---------------------------------------------------------------------------
# Run timing
# ---------------------------------------------------------------------------


class TestRunSection:
    def test_substeps_divide_period(self):
        run = RunSection(control_rate=30.0, dt=1e-3)
        h = run.period / run.substeps
        assert run.substeps == 34
        assert 0 < h <= 1e-3
        assert h * run.substeps == pytest.approx(run.period, rel=1e-15)

    def test_exact_divisor_kept(self):
        assert RunSection(control_rate=50.0, dt=1e-3).substeps == 20

    def test_ticks(self):
        assert RunSection(duration=50.0, control_rate=30.0).ticks == 1500

    def test_realistic_measurement(self):
        m = MeasurementSection.realistic()
        assert (m.noise_std, m.quantization, m.latency) == (5e-5, 1e-4, 1)
