"""Shared fixtures: the Beltrami system, small configs and single steps from the zero state at N = 32."""
import numpy as np
import pytest

from building_blocks import TransportCoeffSystem, choose_eta, construct_beltrami_system, \
    measure_mollification_constant
from ci_step import StepParameters, convex_integration_step, zero_state
from config import parse_run_config
from profile_registry import energy_bounds, get_energy_profile, get_sigma_family
from scheduler import surrogate_schedule
from stochastic_flow import NoiseConfig, field_times, identity_flow, integrate_flow, sample_brownian
from torus_spectral import random_field

SMOKE = {
    "noise": {"sigma": "none", "amplitude": 0.0, "seed": 0, "T": 0.25, "T_neg": 0.125},
    "grid": {"N": 32, "dt": 0.0625},
    "schedule": {"mode": "surrogate"},
    "energy": {"profile": "constant", "c0": 1.0},
    "run": {"n_max": 1, "n_seeds": 2},
}


@pytest.fixture(scope="session")
def system():
    return construct_beltrami_system()


@pytest.fixture
def smoke_config():
    return parse_run_config(SMOKE)


@pytest.fixture
def vector_field():
    return random_field(16, "vector", seed=11, kmax=4)


@pytest.fixture(scope="session")
def zero_step(system):
    """One step from the zero state with the noise switched off"""
    config = parse_run_config(SMOKE)
    N = 32
    times = field_times(0.25, 0.125, 1 / 16)
    state = zero_state(identity_flow(N, times, 0))
    schedule = surrogate_schedule(n_levels=2, N=N, dt=1 / 16, max_component=system.max_component)
    p, nxt = schedule.level(0), schedule.level(1)
    energy = get_energy_profile(config.energy)
    e_min, e_max = energy_bounds(config.energy, 0.25)
    eta = choose_eta(system.r0, e_min, e_max, measure_mollification_constant(N, p.ell))
    params = StepParameters(lam=p.lam, mu=p.mu, ell=p.ell, delta_next=nxt.delta, eta=eta, t_stop=0.25)
    result = convex_integration_step(state, identity_flow(N, times, 1), system, TransportCoeffSystem(p.mu),
                                     energy, params)
    return {"state": state, "result": result, "params": params, "energy": energy, "times": times}


@pytest.fixture(scope="session")
def noisy_step(system):
    """One step from the zero state with ABC transport noise, seed 7"""
    config = parse_run_config(SMOKE)
    N, dt = 32, 1 / 16
    times = field_times(0.25, 0.125, dt)
    noise = NoiseConfig(tuple(get_sigma_family("abc", N, 0.05)), seed=7, T=0.25, T_neg=0.125)
    driver = sample_brownian(noise)
    schedule = surrogate_schedule(n_levels=2, N=N, dt=dt, max_component=system.max_component)
    p, nxt = schedule.level(0), schedule.level(1)
    flows = [integrate_flow(noise, driver.mollified(n, schedule.level(n).varsigma), N, times) for n in (0, 1)]
    energy = get_energy_profile(config.energy)
    e_min, e_max = energy_bounds(config.energy, 0.25)
    eta = choose_eta(system.r0, e_min, e_max, measure_mollification_constant(N, p.ell))
    params = StepParameters(lam=p.lam, mu=p.mu, ell=p.ell, delta_next=nxt.delta, eta=eta, t_stop=0.25)
    result = convex_integration_step(zero_state(flows[0]), flows[1], system, TransportCoeffSystem(p.mu), energy,
                                     params)
    return {"result": result, "params": params, "times": times}


def max_abs(array) -> float:
    return float(np.abs(np.asarray(array)).max())
