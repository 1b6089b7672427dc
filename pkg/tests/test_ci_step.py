"""
Tests for the convex integration step.

The slow cases run one step from the zero state. With the noise switched off every flow is the
identity, only ψ class 0 is active and w_o is a stationary Beltrami field; the noisy step uses
the ABC pair with seed 7.
"""
import numpy as np
import pytest

from building_blocks import pump_domain_defect
from ci_step import (PART_NAMES, EulerReynoldsState, _per_frame, build_wc, check_resolution, divergence_report,
                     euler_reynolds_residual, scalar_identity, summarize_parts, zero_state)
from models import PartSample, UnderResolvedError
from stochastic_flow import field_times, identity_flow
from torus_spectral import (SpaceTimeField, constant, constant_in_time, divergence, field_from_function, random_field,
                            sup_norm)


class TestStateHelpers:
    """Zero state, frame expansion and small field helpers."""

    def test_zero_state(self):
        times = field_times(0.25, 0.125, 1 / 16)
        state = zero_state(identity_flow(8, times))
        assert state.level == 0
        assert state.N == 8
        assert np.all(state.kinetic_energy() == 0)
        assert np.all(euler_reynolds_residual(state) == 0)
        assert np.all(divergence_report(state) == 0)

    def test_negative_times_repeat_first_frame(self):
        times = field_times(0.25, 0.125, 1 / 16)
        seen = []
        frames = _per_frame(times, lambda i: seen.append(i) or constant(float(times[i]), 8))
        assert seen == list(range(2, len(times)))
        assert frames[0] is frames[2]
        assert frames[1] is frames[2]

    def test_scalar_identity(self):
        s = random_field(8, "scalar", seed=4)
        M = scalar_identity(s)
        assert sup_norm(M.trace() - 3 * s) < 1e-14
        assert sup_norm(M.component(0, 1)) == 0.0

    def test_resolution(self, system):
        check_resolution(32, 1, system)
        with pytest.raises(UnderResolvedError, match="needs N"):
            check_resolution(16, 1, system)
        with pytest.raises(UnderResolvedError):
            check_resolution(32, 2, system)

    def test_kinetic_energy_normalisation(self):
        times = field_times(0.0, 0.0, 1 / 16)
        flow = identity_flow(8, np.append(times, 1 / 16))
        state = zero_state(flow)
        v = constant([1.0, 0.0, 0.0], 8, "vector")
        state = EulerReynoldsState(0, SpaceTimeField(flow.times, (v, v)), state.q, state.R, flow)
        assert state.kinetic_energy() == pytest.approx([(2 * np.pi) ** 3] * 2)

    def test_summarize_parts(self):
        rows = [
            PartSample(t=0.0, part_name="transport", sup_norm=1.0, c1_norm=3.0, besov_m1=0.1),
            PartSample(t=0.5, part_name="transport", sup_norm=2.0, c1_norm=1.0, besov_m1=0.2),
            PartSample(t=0.0, part_name="oscillation", sup_norm=0.5, c1_norm=0.5, besov_m1=0.5),
        ]
        parts = summarize_parts(rows)
        assert parts["transport"].sup_norm == 2.0
        assert parts["transport"].c1_norm == 3.0
        assert parts["oscillation"].besov_m1 == 0.5


@pytest.mark.slow
class TestZeroStateStep:
    """One step from (0, 0, 0) without noise."""

    def test_parts_sum_to_total(self, zero_step):
        decomposition = zero_step["result"].decomposition
        scale = max(1.0, max(sup_norm(f) for f in decomposition.total.frames))
        assert decomposition.sum_defect() <= 1e-8 * scale
        assert set(decomposition.parts) == set(PART_NAMES)

    def test_energy_matching(self, zero_step):
        state, delta = zero_step["result"].state, zero_step["params"].delta_next
        target = 1.0 * (1 - delta)
        kinetic = state.kinetic_energy()
        assert (kinetic - target >= -1e-10).all()
        assert (kinetic - target <= 0.1 * delta * 1.0 + 1e-10).all()

    def test_new_reynolds_stress(self, zero_step):
        R = zero_step["result"].state.R
        for frame in R.frames:
            assert sup_norm(frame - frame.transpose()) < 1e-12
            assert sup_norm(frame.trace()) < 1e-10

    def test_euler_reynolds_residual(self, zero_step):
        assert euler_reynolds_residual(zero_step["result"].state).max() < 1e-8

    def test_new_velocity_is_divergence_free(self, zero_step):
        v = zero_step["result"].state.v
        assert max(sup_norm(divergence(frame)) for frame in v.frames) < 1e-9
        assert np.abs(zero_step["result"].state.mean_v()).max() < 1e-12

    def test_oscillation_part_vanishes(self, zero_step):
        oscillation = zero_step["result"].decomposition.parts["oscillation"]
        assert max(sup_norm(frame) for frame in oscillation.frames) < 1e-10

    def test_pump_stays_in_domain(self, zero_step):
        assert pump_domain_defect(zero_step["result"].pump) < 1e-12

    def test_compressibility_corrector(self, zero_step):
        diagnostics = zero_step["result"].diagnostics
        assert diagnostics["wc1_sup"] == 0.0
        assert diagnostics["wc2_sup"] < 1e-10
        assert diagnostics["wo_sup"] > 0

    def test_causal_prefix(self, zero_step):
        state = zero_step["result"].state
        first = int(np.nonzero(state.times >= 0)[0][0])
        for i in range(first):
            assert np.array_equal(state.v[i].coeffs, state.v[first].coeffs)
            assert np.array_equal(state.q[i].coeffs, state.q[first].coeffs)

    def test_stationary_oscillation(self, zero_step):
        w_o = zero_step["result"].w_o
        for frame in w_o.frames[1:]:
            assert sup_norm(frame - w_o[0]) < 1e-12

    def test_part_samples(self, zero_step):
        decomposition = zero_step["result"].decomposition
        rows = decomposition.part_samples([2, 3])
        assert len(rows) == 2 * len(PART_NAMES)
        assert {row.part_name for row in rows} == set(PART_NAMES)
        norms = decomposition.part_norms([2, 3])
        assert set(norms) == set(PART_NAMES)


@pytest.mark.slow
class TestNoisyStep:
    """One step from (0, 0, 0) with ABC transport noise."""

    def test_flows_move(self, noisy_step):
        state = noisy_step["result"].state
        assert not state.flow.is_identity
        assert state.flow.jacobian_log.max() < 1e-4

    def test_parts_sum_to_total(self, noisy_step):
        decomposition = noisy_step["result"].decomposition
        scale = max(1.0, max(sup_norm(f) for f in decomposition.total.frames))
        assert decomposition.sum_defect() <= 1e-8 * scale

    def test_energy_matching(self, noisy_step):
        state, delta = noisy_step["result"].state, noisy_step["params"].delta_next
        positive = state.times >= 0
        gap = np.abs(state.kinetic_energy()[positive] - (1 - delta))
        assert gap.max() <= 0.25 * delta

    def test_new_reynolds_stress(self, noisy_step):
        for frame in noisy_step["result"].state.R.frames:
            assert sup_norm(frame - frame.transpose()) < 1e-12
            assert sup_norm(frame.trace()) < 1e-10

    def test_correctors(self, noisy_step):
        diagnostics = noisy_step["result"].diagnostics
        # v_0 = 0, so only the second corrector is active
        assert diagnostics["wc1_sup"] == 0.0
        assert 0 < diagnostics["wc2_sup"] < diagnostics["wo_sup"]

    def test_divergence_under_the_new_flow(self, noisy_step):
        state = noisy_step["result"].state
        positive = np.nonzero(state.times >= 0)[0]
        assert divergence_report(state)[positive].max() < 1e-3

    def test_causal_prefix(self, noisy_step):
        state = noisy_step["result"].state
        first = int(np.nonzero(state.times >= 0)[0][0])
        for i in range(first):
            assert np.array_equal(state.v[i].coeffs, state.v[first].coeffs)


class TestCompressibilityCorrector:
    """w_c² = −𝒬^φ w_o on a modulated Beltrami carrier."""

    @staticmethod
    def carrier(lam, N=32):
        # (0, cos λx₁, sin λx₁) modulated by sin x₂; its divergence is cos x₂ cos λx₁
        return field_from_function(
            lambda x, y, z: np.stack([0 * x, np.sin(y) * np.cos(lam * x), np.sin(y) * np.sin(lam * x)]), N, "vector")

    def test_decays_like_inverse_lambda(self):
        times = field_times(0.25, 0.125, 1 / 16)
        flow = identity_flow(32, times, 1)
        state = zero_state(identity_flow(32, times, 0))
        lams, sups = [2, 4, 8], []
        for lam in lams:
            w_c1, w_c2 = build_wc(state, constant_in_time(times, self.carrier(lam)), flow, 0.5)
            assert max(sup_norm(f) for f in w_c1.frames) == 0.0
            sups.append(sup_norm(w_c2[len(times) - 1]))
            # ∇Δ⁻¹(cos x₂ cos λx₁) peaks at λ/(λ² + 1)
            assert sups[-1] == pytest.approx(lam / (lam**2 + 1), rel=1e-10)
        slope = np.polyfit(np.log(lams), np.log(sups), 1)[0]
        assert slope < -0.8
