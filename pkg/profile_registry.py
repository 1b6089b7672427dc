"""
Profile Registry - built-in noise fields and energy profiles, selectable by name from a config file
"""
from typing import Callable, Dict, List

import numpy as np

from models import ConfigError, EnergySettings, ParameterError
from torus_spectral import SpectralField, field_from_function

SigmaBuilder = Callable[[int, float], List[SpectralField]]
EnergyProfile = Callable[[np.ndarray], np.ndarray]


def _abc_fields(N: int, amplitude: float) -> List[SpectralField]:
    """Two ABC-type divergence-free fields"""
    return [
        field_from_function(lambda x, y, z: amplitude * np.stack([np.sin(y), np.sin(z), np.sin(x)]), N, "vector"),
        field_from_function(lambda x, y, z: amplitude * np.stack([np.cos(z), np.cos(x), np.cos(y)]), N, "vector"),
    ]


def _shear_fields(N: int, amplitude: float) -> List[SpectralField]:
    zero = lambda x: np.zeros_like(x)
    return [field_from_function(lambda x, y, z: amplitude * np.stack([np.sin(y), zero(x), zero(x)]), N, "vector")]


def _no_fields(N: int, amplitude: float) -> List[SpectralField]:
    return []


# Noise families σ_k (each divergence-free by construction)
SIGMA_FAMILIES: Dict[str, Dict] = {
    "abc": {
        "name": "ABC pair",
        "description": "ε(sin x₂, sin x₃, sin x₁) and ε(cos x₃, cos x₁, cos x₂)",
        "count": 2,
        "builder": _abc_fields,
    },
    "shear": {
        "name": "Single shear",
        "description": "ε(sin x₂, 0, 0); flow stays a pure shear",
        "count": 1,
        "builder": _shear_fields,
    },
    "none": {
        "name": "Noise off",
        "description": "No transport noise; every flow is the identity",
        "count": 0,
        "builder": _no_fields,
    },
}


def _constant_profile(settings: EnergySettings) -> EnergyProfile:
    return lambda t: np.full_like(np.asarray(t, dtype=float), settings.c0)


def _sine_profile(settings: EnergySettings) -> EnergyProfile:
    return lambda t: settings.c0 + settings.c1 * np.sin(np.asarray(t, dtype=float))


def _split_profile(settings: EnergySettings) -> EnergyProfile:
    """Sine profile up to split_time, scaled smoothly by split_factor afterwards"""
    base = _sine_profile(settings)

    def profile(t):
        t = np.asarray(t, dtype=float)
        s = np.clip(t - settings.split_time, 0.0, None)
        # C² ramp from 1 to split_factor over one time unit
        ramp = np.where(s < 1.0, s**3 * (10 - 15 * s + 6 * s**2), 1.0)
        return base(t) * (1.0 + (settings.split_factor - 1.0) * ramp)
    return profile


ENERGY_PROFILES: Dict[str, Dict] = {
    "constant": {"name": "Constant", "description": "e(t) = c0", "builder": _constant_profile},
    "sine": {"name": "Sine", "description": "e(t) = c0 + c1 sin t", "builder": _sine_profile},
    "split": {
        "name": "Split",
        "description": "sine profile on [0, split_time], ramped by split_factor afterwards",
        "builder": _split_profile,
    },
}


def get_sigma_family(name: str, N: int, amplitude: float) -> List[SpectralField]:
    """Build the σ_k fields of a registered family"""
    if name not in SIGMA_FAMILIES:
        raise ConfigError(f"Unknown sigma family '{name}' (known: {', '.join(SIGMA_FAMILIES)})")
    if amplitude == 0.0:
        return []
    return SIGMA_FAMILIES[name]["builder"](N, amplitude)


def get_energy_profile(settings: EnergySettings) -> EnergyProfile:
    if settings.profile not in ENERGY_PROFILES:
        raise ConfigError(f"Unknown energy profile '{settings.profile}' (known: {', '.join(ENERGY_PROFILES)})")
    return ENERGY_PROFILES[settings.profile]["builder"](settings)


def energy_bounds(settings: EnergySettings, horizon: float) -> tuple:
    """(e̲, ē) on [0, horizon]: the declared bounds when set, else the sampled range of the profile"""
    values = get_energy_profile(settings)(np.linspace(0.0, horizon, 1025))
    low, high = float(values.min()), float(values.max())
    if settings.e_min is not None:
        if settings.e_min > low * (1 + 1e-12):
            raise ParameterError(f"e_min={settings.e_min:g} exceeds min e(t)={low:g} on [0, {horizon:g}]")
        low = settings.e_min
    if settings.e_max is not None:
        if settings.e_max < high * (1 - 1e-12):
            raise ParameterError(f"e_max={settings.e_max:g} is below max e(t)={high:g} on [0, {horizon:g}]")
        high = settings.e_max
    return low, high


def get_all_profile_info() -> dict:
    """Descriptions of every registered family and profile"""
    strip = lambda entry: {k: v for k, v in entry.items() if k != "builder"}
    return {
        "sigma": {key: strip(entry) for key, entry in SIGMA_FAMILIES.items()},
        "energy": {key: strip(entry) for key, entry in ENERGY_PROFILES.items()},
    }
