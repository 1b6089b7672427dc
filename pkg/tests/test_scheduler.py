"""
Tests for parameter schedules, iteration records and the inductive-estimate verdicts.
"""
import numpy as np
import pytest
from pydantic import ValidationError

import scheduler
from config import parse_run_config
from models import (EnergySample, IterationRecord, ParameterError, RunConfig, RunManifest,
                    ScheduleSettings, StepError)
from scheduler import (build_schedule, check_inductive_estimates, paper_schedule, pumped_energy, resolved_lambda,
                       run_iterations, surrogate_schedule)
from torus_spectral import sup_norm


def record(level=0, reynolds=0.0, energy_gap=0.0):
    return IterationRecord(
        level=level, stopping_time=1.0, reynolds_sup=reynolds, pressure_sup=0.0, divergence_besov=0.0,
        velocity_c1=0.0, energy_error=energy_gap,
        energy=[EnergySample(t=0.0, measured_energy=energy_gap, target_e_times_1_minus_delta=0.0, bound=0.25)],
    )


def manifest(*records):
    return RunManifest(seed=0, mode="surrogate", config=RunConfig(), constants={"eta": 0.01},
                       iterations=list(records))


def verdict(verdicts, name):
    return next(v for v in verdicts if v.name == name)


class TestPaperSchedule:
    """Exponent bookkeeping of the paper-mode schedule."""

    def test_default_threshold(self):
        schedule = paper_schedule()
        assert schedule.b == 53
        assert schedule.c == pytest.approx((53**4 * 16 - 0.5) / 37, rel=1e-15)
        assert schedule.holder_threshold == pytest.approx(2.765e-9, rel=1e-3)

    def test_smallest_m(self):
        schedule = paper_schedule(m=4)
        assert schedule.b == 19
        assert schedule.holder_threshold == pytest.approx(3.786e-8, rel=1e-3)
        assert schedule.holder_threshold_local == pytest.approx(2 * schedule.holder_threshold, rel=1e-6)

    def test_exponent_identity(self):
        for m in (4, 10, 38):
            assert paper_schedule(m=m).identity_defect() < 1e-12

    def test_levels_stay_finite(self):
        schedule = paper_schedule(n_levels=4)
        assert len(schedule.levels) == 4
        for p in schedule.levels:
            assert 0 < p.delta <= 1
            assert 1 <= p.c_ell < 2
        assert schedule.level(0).delta == 1.0
        assert schedule.level(1).log2_delta == pytest.approx(-52.0)

    def test_rejects_small_a(self):
        with pytest.raises(ParameterError, match="a ≥ 2"):
            paper_schedule(a=1.5)

    def test_snapshot(self):
        snapshot = paper_schedule().snapshot()
        assert snapshot["mode"] == "paper"
        assert "lambda_lower_ok" in snapshot["levels"][0]


class TestSurrogateSchedule:
    """Desk-scale schedule and its overrides."""

    def test_defaults(self):
        schedule = surrogate_schedule(n_levels=3)
        assert [p.delta for p in schedule.levels] == [1.0, 0.5, 0.125]
        p = schedule.level(0)
        assert (p.lam, p.mu, p.ell) == (1, 1, 0.5)
        assert schedule.identity_defect() is None
        assert schedule.interpolation_exponent == 0.25

    def test_integer_ratio_accepted(self):
        p = surrogate_schedule({"lam": 48, "mu": 16}, n_levels=2, N=128).level(0)
        assert (p.lam, p.mu) == (48, 16)

    def test_integer_ratio_rejected(self):
        with pytest.raises(ParameterError, match="positive integer"):
            surrogate_schedule({"lam": 50, "mu": 16})

    def test_levels_separate_scales_on_a_fine_grid(self):
        schedule = surrogate_schedule(n_levels=4, N=1024, dt=2**-8, max_component=1)
        assert [p.lam for p in schedule.levels] == [32, 64, 128, 256]
        assert [p.mu for p in schedule.levels] == [8, 8, 8, 8]
        assert [p.ell for p in schedule.levels] == [0.5, 0.25, 1 / 16, 1 / 64]
        assert not any(p.capped for p in schedule.levels)

    def test_coarse_grid_caps_lambda(self):
        schedule = surrogate_schedule(n_levels=3, N=128, max_component=10)
        assert [(p.lam, p.mu) for p in schedule.levels] == [(4, 4)] * 3
        assert all(p.capped for p in schedule.levels)
        assert schedule.snapshot()["levels"][0]["lam_capped"] is True

    def test_resolved_lambda(self):
        assert resolved_lambda(32, 10) == 1
        assert resolved_lambda(128, 10) == 6
        assert resolved_lambda(1024, 1) == 508

    def test_explicit_lambda_doubles_uncapped(self):
        schedule = surrogate_schedule({"lam": 16, "mu": 8}, n_levels=3, N=32)
        assert [p.lam for p in schedule.levels] == [16, 32, 64]
        assert not any(p.capped for p in schedule.levels)

    def test_mu_must_divide_lambda(self):
        with pytest.raises(ParameterError, match="positive integer"):
            surrogate_schedule({"lam": 32, "mu": 12})

    def test_unknown_override(self):
        with pytest.raises(ParameterError, match="unknown"):
            surrogate_schedule({"gamma": 1})

    def test_ell_override(self):
        assert surrogate_schedule({"ell_inv": 4}).level(1).ell == 0.25
        with pytest.raises(ParameterError, match="power of two"):
            surrogate_schedule({"ell_inv": 3})

    def test_settings_validation(self):
        with pytest.raises(ValidationError):
            ScheduleSettings(lam=50, mu=16)

    def test_level_out_of_range(self):
        with pytest.raises(ParameterError, match="levels 0..1"):
            surrogate_schedule(n_levels=2).level(2)

    def test_build_from_config(self, smoke_config):
        schedule = build_schedule(smoke_config, 4, 10)
        assert schedule.mode == "surrogate"
        assert len(schedule.levels) == 4


class TestInductiveEstimates:
    """Verdicts computed from a manifest."""

    def test_zero_records_pass(self):
        verdicts = check_inductive_estimates(manifest(record()), surrogate_schedule(n_levels=4))
        assert {v.verdict for v in verdicts} == {"pass"}
        assert {v.name for v in verdicts} == {"est_energy", "est_Reynolds", "est_pres", "est_div", "C^1,1"}

    def test_large_reynolds_stress_fails(self):
        verdicts = check_inductive_estimates(manifest(record(reynolds=1.0)), surrogate_schedule(n_levels=4))
        reynolds = verdict(verdicts, "est_Reynolds")
        assert reynolds.verdict == "fail"
        assert reynolds.rhs == pytest.approx(0.01 * 0.5)

    def test_energy_ratio(self):
        verdicts = check_inductive_estimates(manifest(record(energy_gap=0.2)), surrogate_schedule(n_levels=4))
        energy = verdict(verdicts, "est_energy")
        assert energy.lhs == pytest.approx(0.8)
        assert energy.verdict == "pass"

    def test_unknown_constants_are_not_judged(self):
        records = [record(), record(level=1).model_copy(update={"pressure_sup": 3.0})]
        verdicts = check_inductive_estimates(manifest(*records), surrogate_schedule(n_levels=4))
        pressure = [v for v in verdicts if v.name == "est_pres" and v.level == 1][0]
        assert pressure.verdict == "n/a"


class TestRunIterations:
    """The iteration driver."""

    def test_paper_mode_does_not_run_fields(self, smoke_config):
        config = smoke_config.model_copy(update={"schedule": ScheduleSettings(mode="paper")})
        with pytest.raises(ParameterError, match="schedule arithmetic"):
            run_iterations(config)

    def test_n_max_positive(self, smoke_config):
        with pytest.raises(ParameterError, match="at least 1"):
            run_iterations(smoke_config, n_max=-1)

    @pytest.mark.slow
    def test_noise_off_run(self, smoke_config):
        seen = []
        result = run_iterations(smoke_config, observer=lambda m, context: seen.append(len(m.iterations)))
        assert result.status == "complete"
        assert [r.level for r in result.iterations] == [0, 1]
        assert seen[-1] == 2
        assert result.constants["t_stop"] == pytest.approx(0.25)
        step = result.iterations[1]
        assert set(step.parts) == {"transport", "mollification_I", "mollification_II", "oscillation",
                                   "flow_error", "compressibility"}
        assert step.velocity_increment > 0
        assert verdict(result.verdicts, "est_energy").verdict == "pass"
        assert all(v.verdict in ("pass", "fail", "n/a") for v in result.verdicts)

    def test_pumped_energy(self):
        r0 = 0.3
        at_budget = pumped_energy(0.0, 0.01, 0.5, r0)
        assert at_budget == pytest.approx(3 * (2 * np.pi) ** 3 * (2 / r0) * 0.01 * 0.5)
        assert pumped_energy(0.004, 0.01, 0.5, r0) == pytest.approx(at_budget * np.sqrt(1 + 0.8**2))

    @pytest.mark.slow
    def test_oversized_reynolds_stress_stops_the_run(self, smoke_config, monkeypatch):
        measured = scheduler.level_record

        def inflated(state, *args, **kwargs):
            record = measured(state, *args, **kwargs)
            return record.model_copy(update={"reynolds_sup": 1.0}) if state.level else record

        monkeypatch.setattr(scheduler, "level_record", inflated)
        seen = []
        with pytest.raises(StepError, match="pumps"):
            run_iterations(smoke_config, n_max=2, observer=lambda m, context: seen.append(m))
        manifest = seen[-1]
        assert manifest.status == "partial"
        assert manifest.error.startswith("STEP_ERROR")
        assert [r.level for r in manifest.iterations] == [0, 1]


NOISY = {
    "noise": {"sigma": "abc", "amplitude": 0.05, "seed": 7, "T": 0.5, "T_neg": 0.125},
    "grid": {"N": 32, "dt": 0.0625},
    "schedule": {"mode": "surrogate", "K0": 1e6},
    "energy": {"profile": "sine", "c0": 1.0, "c1": 0.2, "split_time": 0.25, "split_factor": 0.8,
               "e_min": 0.75, "e_max": 1.2},
    "run": {"n_max": 1},
}


def final_state(config):
    captured = {}
    run_iterations(config, observer=lambda manifest, context: captured.update(states=list(context.states)))
    return captured["states"][-1]


def assert_same_prefix(a, b, t_star):
    prefix = np.nonzero(a.times <= t_star + 1e-12)[0]
    for i in prefix:
        for mine, theirs in ((a.v[i], b.v[i]), (a.q[i], b.q[i]), (a.R[i], b.R[i])):
            assert np.array_equal(mine.coeffs, theirs.coeffs)
    assert sup_norm(a.v[len(a.times) - 1] - b.v[len(b.times) - 1]) > 0


@pytest.mark.slow
class TestExperiments:
    """Noisy one-step runs compared frame by frame."""

    def test_split_energy_profiles_share_the_prefix(self):
        base = parse_run_config(NOISY)
        split = base.model_copy(update={"energy": base.energy.model_copy(update={"profile": "split"})})
        assert_same_prefix(final_state(base), final_state(split), 0.25)

    def test_state_ignores_noise_after_a_time(self, monkeypatch):
        config = parse_run_config(NOISY)
        reference = final_state(config)
        sampled = scheduler.sample_brownian
        monkeypatch.setattr(scheduler, "sample_brownian", lambda noise: sampled(noise).perturbed_after(0.25, 99))
        assert_same_prefix(reference, final_state(config), 0.25)
