"""
Tests for the noise driver, Lagrangian flows and conjugated operators.
"""
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from models import InvalidFieldError, NoiseSettings, ParameterError, UnderResolvedError
from profile_registry import get_sigma_family
from stochastic_flow import (K_schedule, MollifiedPath, NoiseConfig, NoiseVelocity, P_phi, Q_phi, R_phi, RoughDriver,
                             _conjugate, _flow_step, compose_with_flow, compute_stopping_times, cumulative_lift,
                             curl_phi, div_phi, estimate_K0, field_times, fitted_slope, flow_distance, grad_phi,
                             identity_flow, integrate_flow, integrate_points, laplace_phi_solve, lift_increment,
                             linear_path, mollify_path, rough_distance, sample_brownian, wong_zakai_rates)
from torus_spectral import (constant, curl, divergence, field_from_function, gradient, grid_points, laplacian,
                            random_field, sup_norm)
from verification_service import shear_frame


def abc_noise(T=0.25, dt_path=2.0**-8, seed=3):
    return NoiseConfig(tuple(get_sigma_family("abc", 8, 0.05)), seed=seed, T=T, T_neg=0.0, dt_path=dt_path)


class TestNoiseConfig:
    """Validation of the σ_k fields."""

    def test_abc_family(self):
        assert abc_noise().n_components == 2
        assert abc_noise().n_steps == 64

    def test_rejects_compressible_sigma(self):
        sigma = field_from_function(lambda x, y, z: np.stack([np.sin(x), 0 * x, 0 * x]), 8, "vector")
        with pytest.raises(InvalidFieldError, match="divergence-free"):
            NoiseConfig((sigma,))

    def test_rejects_scalar_sigma(self):
        with pytest.raises(InvalidFieldError, match="vector"):
            NoiseConfig((random_field(8, "scalar"),))


class TestBrownianDriver:
    """Sampling, perturbation and mollification of the driver."""

    def test_reproducible(self):
        a, b = sample_brownian(abc_noise()), sample_brownian(abc_noise())
        assert np.array_equal(a.B, b.B)
        assert np.all(a.B[:, 0] == 0)

    def test_seeds_differ(self):
        assert not np.array_equal(sample_brownian(abc_noise(seed=1)).B, sample_brownian(abc_noise(seed=2)).B)

    def test_perturbed_after_keeps_prefix(self):
        driver = sample_brownian(abc_noise())
        other = driver.perturbed_after(0.125, seed=5)
        assert np.array_equal(driver.B[:, :33], other.B[:, :33])
        assert not np.array_equal(driver.B[:, 33:], other.B[:, 33:])

    def test_mollification_is_causal(self):
        driver = sample_brownian(abc_noise())
        other = driver.perturbed_after(0.125, seed=5)
        a, b = mollify_path(driver, 0, 2.0**-5), mollify_path(other, 0, 2.0**-5)
        np.testing.assert_allclose(a.values[:, :33], b.values[:, :33], rtol=0, atol=1e-15)
        np.testing.assert_allclose(a.d1[:, :33], b.d1[:, :33], rtol=0, atol=1e-12)

    def test_mollified_path_starts_at_zero(self):
        path = mollify_path(sample_brownian(abc_noise()), 0, 2.0**-5)
        assert np.all(path.values[:, 0] == 0)
        assert np.all(path.d1[:, 0] == 0)

    def test_varsigma_below_two_steps(self):
        with pytest.raises(UnderResolvedError, match="below"):
            mollify_path(sample_brownian(abc_noise()), 0, 2.0**-8)

    def test_cached_mollification(self):
        driver = sample_brownian(abc_noise())
        assert driver.mollified(1, 2.0**-5) is driver.mollified(1, 2.0**-5)

    def test_linear_path(self):
        times = np.linspace(-0.25, 0.5, 13)
        path = linear_path(times, [2.0])
        assert np.all(path.values[0, times <= 0] == 0)
        assert path.values[0, -1] == pytest.approx(1.0)
        assert np.all(path.d1 == 2.0)

    @pytest.mark.slow
    def test_unit_variance_at_time_one(self):
        noise = abc_noise(T=1.0, dt_path=2.0**-4)
        ends = np.concatenate([sample_brownian(replace(noise, seed=seed)).B[:, -1] for seed in range(10_000)])
        assert abs(ends.mean()) < 0.05
        assert 0.94 <= ends.var() <= 1.06

    def test_mollified_linear_driver_lags_by_half_a_window(self):
        noise = abc_noise(T=1.0, dt_path=2.0**-10)
        times = noise.dt_path * np.arange(noise.n_steps + 1)
        slope = np.array([[1.5], [-0.5]])
        varsigma = 2.0**-4
        path = mollify_path(RoughDriver(noise, times, slope * times), 0, varsigma)
        M = int(round(varsigma / noise.dt_path))
        np.testing.assert_allclose(path.values[:, M:], slope * (times[M:] - varsigma / 2), rtol=0, atol=1e-12)
        np.testing.assert_allclose(path.d1[:, M:], np.broadcast_to(slope, path.d1[:, M:].shape), rtol=1e-4)

    @pytest.mark.slow
    def test_mollification_error_rate(self):
        varsigmas = 2.0 ** -np.arange(3, 8)
        slopes = []
        for seed in range(10):
            noise = abc_noise(T=1.0, dt_path=2.0**-10, seed=seed)
            driver = sample_brownian(noise)
            distances = [rough_distance(driver.B, mollify_path(driver, n, s).values, driver.times, noise.beta).value
                         for n, s in enumerate(varsigmas)]
            slopes.append(fitted_slope(varsigmas, distances))
        assert np.median(slopes) >= noise.alpha - noise.beta - 0.1


class TestLift:
    """Stratonovich lift and rough distance."""

    def test_symmetric_part_of_lift(self):
        path = np.cumsum(np.random.default_rng(0).standard_normal((3, 200)), axis=1)
        cumulative = cumulative_lift(path)
        for s, t in [(0, 199), (17, 120), (50, 51)]:
            lift = lift_increment(path, cumulative, s, t)
            inc = path[:, t] - path[:, s]
            np.testing.assert_allclose(0.5 * (lift + lift.T), 0.5 * np.outer(inc, inc), atol=1e-9)

    def test_distance_to_itself(self):
        driver = sample_brownian(abc_noise())
        assert rough_distance(driver.B, driver.B, driver.times, 0.35).value == 0.0

    def test_mismatched_grids(self):
        with pytest.raises(InvalidFieldError):
            rough_distance(np.zeros((2, 5)), np.zeros((2, 6)), np.linspace(0, 1, 5), 0.35)

    def test_stop_beyond_horizon(self):
        driver = sample_brownian(abc_noise())
        with pytest.raises(ParameterError, match="horizon"):
            rough_distance(driver.B, driver.B, driver.times, 0.35, t_stop=1.0)

    def test_chen_relation(self):
        path = np.cumsum(np.random.default_rng(1).standard_normal((2, 300)), axis=1) * 0.05
        cumulative = cumulative_lift(path)
        rng = np.random.default_rng(2)
        for _ in range(100):
            s, u, t = np.sort(rng.choice(300, size=3, replace=False))
            joined = (lift_increment(path, cumulative, s, u) + lift_increment(path, cumulative, u, t)
                      + np.outer(path[:, u] - path[:, s], path[:, t] - path[:, u]))
            np.testing.assert_allclose(lift_increment(path, cumulative, s, t), joined, rtol=0, atol=1e-9)

    def test_lift_of_a_straight_line(self):
        path = linear_path(np.linspace(0, 1, 129), [0.7, -1.3]).values
        cumulative = cumulative_lift(path)
        for s, t in [(0, 128), (5, 77), (40, 41)]:
            inc = path[:, t] - path[:, s]
            np.testing.assert_allclose(lift_increment(path, cumulative, s, t), 0.5 * np.outer(inc, inc),
                                       rtol=0, atol=1e-13)


class TestStoppingTimes:
    """Stopping times from the monitored Hölder quantities."""

    def test_extreme_thresholds(self):
        report = compute_stopping_times(sample_brownian(abc_noise()), [0.0, np.inf])
        assert report.t_stop[0] == 0.0
        assert report.t_stop[1] == pytest.approx(0.25)

    def test_monotone_in_K(self):
        report = compute_stopping_times(sample_brownian(abc_noise()), K_schedule(0.5, 4))
        assert np.all(np.diff(report.t_stop) >= 0)

    def test_K_schedule(self):
        assert K_schedule(2.0, 3) == [2.0, 4.0, 6.0]

    @pytest.mark.slow
    def test_probability_of_reaching_the_horizon(self):
        settings = NoiseSettings(sigma="abc", amplitude=0.05, T=0.25, T_neg=0.0, dt_path=2.0**-8)
        drivers = [sample_brownian(NoiseConfig.from_settings(settings.model_copy(update={"seed": seed}), 8))
                   for seed in range(200)]

        def reached(K):
            stops = np.array([compute_stopping_times(driver, K).t_stop for driver in drivers])
            return np.mean(stops >= settings.T - 1e-12, axis=0)

        fractions = reached([0.5, 2.0, 8.0, 1e4])
        assert np.all(np.diff(fractions) >= 0)
        assert fractions[0] < 0.1
        assert fractions[-1] == 1.0
        K0 = estimate_K0(settings, 8, 0.9, 200)
        assert reached([K0])[0] >= 0.9
        if K0 > 0.25:
            assert reached([K0 / 2])[0] < 0.9


class TestFlowIntegration:
    """RK4 flows, their inverses and time derivatives."""

    def test_step_must_divide_field_dt(self):
        path = linear_path(np.arange(0, 0.5 + 2.0**-7, 2.0**-6), [1.0])
        with pytest.raises(ParameterError, match="even multiple"):
            _flow_step(path, 3 * 2.0**-6)

    def test_noise_off_gives_identity(self):
        times = field_times(0.5, 0.25, 0.125)
        path = linear_path(np.arange(0, 0.5 + 2.0**-7, 2.0**-6), [])
        flow = integrate_flow(NoiseConfig(()), path, 8, times)
        assert flow.is_identity
        assert len(flow) == len(times)

    def test_shear_flow_along_linear_driver(self):
        eps = 0.05
        noise = NoiseConfig(tuple(get_sigma_family("shear", 16, eps)), T=0.5, T_neg=0.0, dt_path=2.0**-6)
        path = linear_path(np.arange(0, 0.5 + 2.0**-7, 2.0**-6), [1.0])
        times = field_times(0.5, 0.125, 0.125)
        flow = integrate_flow(noise, path, 16, times)
        y = grid_points(16)[1]
        for frame in flow.frames:
            if frame.t <= 0:
                assert frame.is_identity
                continue
            # the first RK4 stage sees the driver derivative at t = 0, which is zero
            shift = eps * np.sin(y) * (frame.t - flow.step / 6)
            displacement = frame.displacement.samples()
            assert np.abs(displacement[0] - shift).max() < 1e-12
            assert np.abs(displacement[1:]).max() < 1e-13
            assert np.abs(frame.inverse_displacement.samples()[0] + shift).max() < 1e-12
            assert np.abs(frame.velocity.samples()[0] - eps * np.sin(y)).max() < 1e-12
        assert flow.jacobian_log.max() < 1e-12
        assert flow.composition_log.max() < 1e-12

    def test_points_match_an_adaptive_solver(self):
        fields = get_sigma_family("abc", 8, 0.05)
        times = 2.0**-8 * np.arange(257)
        path = MollifiedPath(times, np.stack([times**2, 1 - np.cos(times)]), np.stack([2 * times, np.sin(times)]),
                             np.stack([np.full_like(times, 2.0), np.cos(times)]), 0.0)
        points = np.random.default_rng(4).uniform(0, 2 * np.pi, size=(3, 16))
        ours = integrate_points(fields, path, points, 0.0, 1.0)
        velocity = NoiseVelocity(fields)
        rhs = lambda t, y: velocity(y.reshape(3, -1), np.array([2 * t, np.sin(t)])).ravel()
        reference = solve_ivp(rhs, (0.0, 1.0), points.ravel(), method="DOP853", rtol=1e-12, atol=1e-12)
        assert np.abs(reference.y[:, -1].reshape(3, -1) - ours).max() < 1e-8


class TestConjugatedOperators:
    """Composition with a flow frame and operators conjugated by it."""

    def test_round_trip_composition(self):
        frame = shear_frame(32)
        f = random_field(32, "scalar", seed=1, kmax=3)
        back = compose_with_flow(compose_with_flow(f, frame, "forward"), frame, "inverse")
        assert sup_norm(back - f) < 1e-9

    def test_unknown_direction(self):
        with pytest.raises(ValueError, match="direction"):
            compose_with_flow(random_field(8), shear_frame(8), "sideways")

    def test_div_phi_matches_conjugation(self):
        frame = shear_frame(32)
        F = random_field(32, "vector", seed=2, kmax=3)
        assert sup_norm(div_phi(F, frame) - _conjugate(divergence, F, frame)) < 1e-6

    def test_leray_split_under_flow(self):
        frame = shear_frame(32)
        v = random_field(32, "vector", seed=3, kmax=3)
        assert sup_norm(P_phi(v, frame) + Q_phi(v, frame) - v) < 1e-14
        assert sup_norm(div_phi(P_phi(v, frame), frame)) < 1e-5

    def test_jacobian_of_shear(self):
        assert shear_frame(16).jacobian_defect() < 1e-13

    def test_chain_rule_gradient_and_curl(self):
        frame = shear_frame(32)
        q = random_field(32, "scalar", seed=4, kmax=3)
        v = random_field(32, "vector", seed=5, kmax=3)
        assert sup_norm(grad_phi(q, frame) - _conjugate(gradient, q, frame)) < 1e-6
        assert sup_norm(curl_phi(v, frame) - _conjugate(curl, v, frame)) < 1e-6

    def test_identity_frame_falls_back_to_flat_operators(self):
        frame = identity_flow(8, np.array([0.0]))[0]
        v = random_field(8, "vector", seed=6, kmax=2)
        assert sup_norm(curl_phi(v, frame) - curl(v)) == 0.0
        assert sup_norm(div_phi(v, frame) - divergence(v)) == 0.0

    def test_inverse_divergence_under_flow(self):
        frame = shear_frame(32)
        w = random_field(32, "vector", seed=7, kmax=3)
        flat_mean = constant(compose_with_flow(w, frame, "inverse").mean(), 32, "vector")
        assert sup_norm(div_phi(R_phi(w, frame), frame) - (w - flat_mean)) < 1e-5

    def test_laplace_solve_under_flow(self):
        frame = shear_frame(32)
        rhs = random_field(32, "scalar", seed=8, kmax=3)
        psi = laplace_phi_solve(rhs, frame)
        assert abs(psi.mean()) < 1e-8
        residual = _conjugate(laplacian, psi, frame) - (rhs - constant(rhs.mean(), 32))
        assert sup_norm(residual) < 1e-6 * max(1.0, sup_norm(rhs))


class TestFlowDistance:
    """sup distance between two flows and their inverses."""

    def test_distance_to_identity(self):
        eps = 0.05
        noise = NoiseConfig(tuple(get_sigma_family("shear", 16, eps)), T=0.5, T_neg=0.0, dt_path=2.0**-6)
        path = linear_path(np.arange(0, 0.5 + 2.0**-7, 2.0**-6), [1.0])
        times = field_times(0.5, 0.0, 0.125)
        flow = integrate_flow(noise, path, 16, times)
        assert flow_distance(flow, flow) == (0.0, 0.0)
        forward, inverse = flow_distance(flow, identity_flow(16, times))
        assert forward == pytest.approx(eps * (0.5 - flow.step / 6), rel=1e-9)
        assert inverse == pytest.approx(forward, rel=1e-9)


class TestEstimateK0:
    """Monte Carlo choice of the first stopping threshold."""

    def test_without_noise_the_horizon_decides(self):
        settings = NoiseSettings(sigma="none", amplitude=0.0, T=0.25, T_neg=0.0)
        assert estimate_K0(settings, 8, 0.9, 2) == 0.25
        assert estimate_K0(settings.model_copy(update={"T": 1.0}), 8, 0.9, 2) == 1.0

    def test_unreachable_probability(self):
        settings = NoiseSettings(sigma="none", amplitude=0.0, T=0.25, T_neg=0.0)
        with pytest.raises(ParameterError, match="No K0"):
            estimate_K0(settings, 8, 1.5, 2)


class TestWongZakai:
    """Rate tables and the fitted slopes."""

    def test_needs_three_levels(self):
        with pytest.raises(ParameterError, match="at least 3"):
            wong_zakai_rates(abc_noise(), 2, 0.125)

    def test_fitted_slope(self):
        varsigmas = [1.0, 0.5, 0.25, 0.125]
        assert fitted_slope(varsigmas, [s**0.5 for s in varsigmas]) == pytest.approx(0.5)

    def test_slope_of_vanishing_distances(self):
        assert np.isnan(fitted_slope([1.0, 0.5, 0.25], [0.0, 0.0, 0.0]))

    @pytest.mark.slow
    def test_rate_table_shape(self):
        rows = wong_zakai_rates(abc_noise(T=0.25, dt_path=2.0**-9), 3, 2.0**-3, n_points=16)
        assert [row.level for row in rows] == [0, 1, 2]
        assert [row.varsigma for row in rows] == [0.125, 0.0625, 0.03125]
        assert all(row.flow_dist >= 0 and row.path_dist > 0 for row in rows)
