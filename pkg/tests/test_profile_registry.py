"""
Tests for the named noise families and energy profiles.
"""
import numpy as np
import pytest

from models import ConfigError, EnergySettings, ParameterError
from profile_registry import (ENERGY_PROFILES, SIGMA_FAMILIES, energy_bounds, get_all_profile_info,
                              get_energy_profile, get_sigma_family)
from torus_spectral import divergence, sup_norm


class TestSigmaFamilies:
    """σ_k fields by name."""

    @pytest.mark.parametrize("name", ["abc", "shear"])
    def test_divergence_free(self, name):
        fields = get_sigma_family(name, 16, 0.05)
        assert len(fields) == SIGMA_FAMILIES[name]["count"]
        for sigma in fields:
            assert sigma.shape == "vector"
            assert sup_norm(divergence(sigma)) < 1e-14
            assert np.abs(sigma.samples()).max() == pytest.approx(0.05, rel=1e-12)

    def test_zero_amplitude_switches_noise_off(self):
        assert get_sigma_family("abc", 16, 0.0) == []

    def test_none_family(self):
        assert get_sigma_family("none", 16, 0.05) == []

    def test_unknown_family(self):
        with pytest.raises(ConfigError, match="Unknown sigma family"):
            get_sigma_family("vortex", 16, 0.05)


class TestEnergyProfiles:
    """e(t) builders and their bounds."""

    def test_constant(self):
        e = get_energy_profile(EnergySettings(c0=2.0))
        np.testing.assert_array_equal(e(np.linspace(0, 1, 5)), 2.0)

    def test_sine(self):
        e = get_energy_profile(EnergySettings(profile="sine", c0=1.0, c1=0.5))
        assert e(np.pi / 2) == pytest.approx(1.5)
        assert e(0.0) == pytest.approx(1.0)

    def test_split_profile(self):
        settings = EnergySettings(profile="split", c0=1.0, c1=0.5, split_time=0.5, split_factor=1.5)
        split = get_energy_profile(settings)
        sine = get_energy_profile(settings.model_copy(update={"profile": "sine"}))
        before = np.linspace(0, 0.5, 9)
        np.testing.assert_allclose(split(before), sine(before))
        assert split(2.0) == pytest.approx(1.5 * sine(2.0))

    def test_split_profile_is_smooth_at_the_split(self):
        settings = EnergySettings(profile="split", c0=1.0, split_time=0.5, split_factor=3.0)
        split = get_energy_profile(settings)
        h = 1e-4
        slope = (split(0.5 + h) - split(0.5)) / h
        assert abs(slope) < 1e-6

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="Unknown energy profile"):
            get_energy_profile(EnergySettings(profile="ramp"))

    def test_energy_bounds(self):
        assert energy_bounds(EnergySettings(c0=1.5), 1.0) == (1.5, 1.5)
        low, high = energy_bounds(EnergySettings(profile="sine", c0=1.0, c1=0.5), np.pi / 2)
        assert low == pytest.approx(1.0)
        assert high == pytest.approx(1.5)

    def test_declared_bounds_do_not_see_the_split(self):
        declared = {"c0": 1.0, "c1": 0.2, "split_time": 0.5, "e_min": 0.75, "e_max": 1.2}
        base = EnergySettings(profile="sine", **declared)
        lowered = EnergySettings(profile="split", split_factor=0.8, **declared)
        assert energy_bounds(base, 2.0) == energy_bounds(lowered, 2.0) == (0.75, 1.2)
        # without declared bounds the later branch moves e̲
        sampled = lambda s: energy_bounds(s.model_copy(update={"e_min": None, "e_max": None}), 2.0)
        assert sampled(lowered)[0] < sampled(base)[0]

    def test_declared_bounds_must_hold(self):
        with pytest.raises(ParameterError, match="e_min=1.1 exceeds"):
            energy_bounds(EnergySettings(c0=1.0, e_min=1.1), 1.0)
        with pytest.raises(ParameterError, match="e_max=0.9 is below"):
            energy_bounds(EnergySettings(c0=1.0, e_max=0.9), 1.0)
        with pytest.raises(ValueError, match="e_min must not exceed e_max"):
            EnergySettings(e_min=2.0, e_max=1.0)


class TestProfileInfo:

    def test_builders_are_stripped(self):
        info = get_all_profile_info()
        assert set(info["sigma"]) == set(SIGMA_FAMILIES)
        assert set(info["energy"]) == set(ENERGY_PROFILES)
        assert all("builder" not in entry for entry in info["sigma"].values())
        assert info["sigma"]["abc"]["count"] == 2
