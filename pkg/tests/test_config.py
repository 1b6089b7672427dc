"""
Tests for experiment file loading, validation and the console log threshold.
"""
from pathlib import Path

import pytest
from pydantic import ValidationError

import config
from config import (get_runtime_config, is_development, is_production, load_run_config, log, parse_run_config,
                    set_log_level)
from models import ConfigError, GridSettings, NoiseSettings, RunConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class TestLoadRunConfig:
    """TOML files on disk."""

    def test_demo_config(self):
        run = load_run_config(CONFIGS / "demo.toml")
        assert run.noise.sigma == "abc"
        assert run.noise.dt_path == 2.0**-10
        assert run.grid.N == 32
        assert run.run.n_max == 1

    def test_smoke_config(self):
        run = load_run_config(CONFIGS / "smoke.toml")
        assert run.noise.amplitude == 0.0
        assert run.run.n_max == 1
        # omitted keys keep their defaults
        assert run.noise.alpha == 0.45

    def test_missing_file(self, tmp_path):
        missing = tmp_path / "nope.toml"
        with pytest.raises(ConfigError, match="Config file not found"):
            load_run_config(missing)

    def test_invalid_toml(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("[grid\nN = 32\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="not valid TOML"):
            load_run_config(path)

    def test_error_code(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_run_config(tmp_path / "nope.toml")
        assert info.value.error_code == "CONFIG_ERROR"


class TestParseRunConfig:
    """Validation of an already parsed mapping."""

    def test_empty_mapping_gives_defaults(self):
        assert parse_run_config({}) == RunConfig()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="grid.M"):
            parse_run_config({"grid": {"M": 3}})

    def test_resolution_must_be_power_of_two(self):
        with pytest.raises(ConfigError, match="power of two"):
            parse_run_config({"grid": {"N": 24}}, source="inline")

    def test_resolution_range(self):
        with pytest.raises(ConfigError, match="grid.N"):
            parse_run_config({"grid": {"N": 256}})

    def test_beta_below_alpha(self):
        with pytest.raises(ConfigError, match="beta must be smaller than alpha"):
            parse_run_config({"noise": {"alpha": 0.4, "beta": 0.45}})

    def test_energy_profile_stays_positive(self):
        with pytest.raises(ConfigError, match="c1 must be smaller than c0"):
            parse_run_config({"energy": {"profile": "sine", "c0": 1.0, "c1": 1.0}})

    def test_source_in_message(self):
        with pytest.raises(ConfigError, match="Invalid config inline"):
            parse_run_config({"run": {"n_max": 0}}, source="inline")


class TestSettingsModels:
    """Behaviour of the frozen sections."""

    def test_sections_are_frozen(self):
        settings = GridSettings()
        with pytest.raises(ValidationError):
            settings.N = 64

    def test_with_seed(self):
        run = RunConfig()
        reseeded = run.with_seed(42)
        assert reseeded.noise.seed == 42
        assert run.noise.seed == 0
        assert reseeded.grid == run.grid

    def test_noise_defaults(self):
        noise = NoiseSettings()
        assert noise.beta < noise.alpha < 0.5


class TestLogging:
    """Console threshold used by every tagged log line."""

    @pytest.fixture(autouse=True)
    def _restore_level(self, monkeypatch):
        monkeypatch.setattr(config, "_active_level", config._active_level)

    def test_quiet_drops_info(self, capsys):
        set_log_level("WARNING")
        log("🧩 [STEP] hidden")
        log("⚠️ [FLOW] shown", "WARNING")
        out = capsys.readouterr().out
        assert "hidden" not in out
        assert "shown" in out

    def test_verbose_shows_debug(self, capsys):
        set_log_level("DEBUG")
        log("🔍 [VERIFY] detail", "DEBUG")
        assert "detail" in capsys.readouterr().out

    def test_unknown_level_keeps_threshold(self):
        set_log_level("WARNING")
        set_log_level("LOUD")
        assert config._active_level == 30

    def test_runtime_config(self):
        runtime = get_runtime_config()
        assert set(runtime) == {"environment", "log_level", "threads", "composition_chunk", "output_dir"}
        assert runtime["threads"] >= 1
        assert is_production() == (runtime["environment"] == "production")
        assert is_development() == (runtime["environment"] == "development")
