"""
Verification Service - invariant suites behind `cli_runner verify`.

Each suite returns InvariantCheck rows (measured value vs bound). Checks without a fixed
bound report a measured constant and always pass.
"""
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from building_blocks import (TransportCoeffSystem, amplitudes, beltrami_field, choose_eta, compute_Uk,
                             construct_beltrami_system, measure_mollification_constant, pump_domain_defect,
                             random_symmetric_near_identity, stationary_phase_check)
from ci_step import StepParameters, convex_integration_step, euler_reynolds_residual, zero_state
from config import log
from models import (ConvexIntegrationError, InvariantCheck, RunConfig, VerificationFailure,
                    VerificationReport)
from profile_registry import energy_bounds, get_energy_profile
from scheduler import surrogate_schedule
from stochastic_flow import (FlowFrame, NoiseConfig, NoiseVelocity, P_phi, R_phi, compose_with_flow, div_phi,
                             field_times, identity_flow, integrate_flow, integrate_points, sample_brownian)
from torus_spectral import (TWO_PI, SpectralField, besov_norm, divergence, dot, field_from_function, gradient,
                            holder_norm, inverse_divergence_R, leray_P, outer, random_field, sup_norm, zeros)

_EYE = np.eye(3)
_SHEAR = 0.05


def shear_frame(N: int, eps: float = _SHEAR) -> FlowFrame:
    """x ↦ (x₁ + ε sin x₂, x₂, x₃): measure preserving with an exact inverse"""
    forward = field_from_function(lambda x, y, z: np.stack([eps * np.sin(y), 0 * x, 0 * x]), N, "vector")
    zero = zeros(N, "vector")
    return FlowFrame(0.0, forward, -forward, zero, zero)


def tau_derivative(psi: TransportCoeffSystem, v: np.ndarray, tau: np.ndarray, k: np.ndarray,
                   h: float = 1e-4) -> np.ndarray:
    """Fourth-order central difference of ψ in τ; truncation ~ h⁴|k·l/μ|⁵/30"""
    at = lambda shift: psi.psi(v, tau + shift, k)
    return (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h)


def _check(suite: str, name: str, measured: float, bound: Optional[float], detail: str = "") -> InvariantCheck:
    measured = float(measured)
    passed = True if bound is None else bool(np.isfinite(measured) and measured <= bound)
    return InvariantCheck(suite=suite, name=name, measured=measured, bound=bound, passed=passed, detail=detail)


class VerificationService:
    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        self._system = None

    @property
    def system(self):
        if self._system is None:
            self._system = construct_beltrami_system(self.config.schedule.min_norm_sq)
        return self._system

    # ------------------------------------------------------------------
    # Suites
    # ------------------------------------------------------------------

    def _beltrami(self) -> List[InvariantCheck]:
        suite, N = "beltrami", 32
        system = self.system
        rng = np.random.default_rng(self.config.noise.seed)
        coeffs = {}
        for family in (system.families[0], system.families[3]):
            for k in family.pairs:
                a = complex(rng.standard_normal(), rng.standard_normal())
                coeffs[tuple(int(c) for c in k)] = a
                coeffs[tuple(int(-c) for c in k)] = np.conj(a)
        E = beltrami_field(system, coeffs, 1, N)
        checks = [
            _check(suite, "div_E", sup_norm(divergence(E)), 1e-10),
            _check(suite, "div_EE_minus_grad_half_E2",
                   sup_norm(divergence(outer(E, E)) - gradient(0.5 * dot(E, E))), 1e-8),
        ]

        # space average survives a measure-preserving flow
        moved = beltrami_field(system, coeffs, 1, N, frame=shear_frame(N))
        expected = np.zeros((3, 3))
        for k, a in coeffs.items():
            unit = np.asarray(k, dtype=float) / system.lambda0
            expected += 0.5 * abs(a) ** 2 * (_EYE - np.outer(unit, unit))
        average = outer(moved, moved).mean()
        checks.append(_check(suite, "space_average_under_flow", np.abs(average - expected).max(), 1e-8))

        # stationary phase along a sphere wavevector
        factor_sets = [
            (lambda x: np.exp(np.cos(x)), lambda x: np.exp(np.sin(x)), lambda x: 1 + 0 * x),
            (lambda x: 1 / (2 + np.sin(x)), lambda x: np.cos(x) ** 2, lambda x: np.exp(np.cos(2 * x))),
            (lambda x: np.sin(x) + 0.5 * np.cos(3 * x), lambda x: 1 / (1.5 + np.cos(x)), lambda x: np.cos(x)),
            (lambda x: np.exp(-np.sin(x) ** 2), lambda x: np.exp(0.5 * np.cos(x)), lambda x: 2 + np.sin(x)),
            (lambda x: np.cos(x) * np.exp(np.sin(x)), lambda x: 1 + 0.3 * np.sin(2 * x), lambda x: np.exp(np.sin(x))),
        ]
        k = system.families[0].pairs[0]
        worst = 0.0
        for factors in factor_sets:
            for r in (1, 2, 3):
                for lam in (2, 4, 8, 16, 32, 64):
                    integral, bound = stationary_phase_check(factors, k, lam, r)
                    worst = max(worst, integral / bound if bound > 0 else (0.0 if integral == 0 else np.inf))
        checks.append(_check(suite, "stationary_phase_ratio", worst, 1.0, f"k={tuple(int(c) for c in k)}"))
        return checks

    def _geometry(self) -> List[InvariantCheck]:
        suite = "geometry"
        system = self.system
        R = random_symmetric_near_identity(system.r0 / 2, 1000, seed=self.config.noise.seed)
        reconstruction = isotropy = 0.0
        positivity = np.inf
        for family in system.families:
            reconstruction = max(reconstruction, float(np.abs(family.reconstruct(R) - R).max()))
            positivity = min(positivity, float(family.linear_forms(R).min()))
            isotropy = max(isotropy, float(np.abs(family.reconstruct(_EYE) - _EYE).max()))
        checks = [
            _check(suite, "reconstruction_max_error", reconstruction, 1e-9, f"|k|²={system.lambda0_sq}"),
            _check(suite, "negative_min_linear_form", -positivity, 0.0),
            _check(suite, "isotropy_at_identity", isotropy, 1e-12),
            _check(suite, "r0", system.r0, None),
        ]

        # W⊗W modes: U_0 = R, U_m symmetric, U_m m = ½Tr(U_m) m
        rng = np.random.default_rng(1)
        P = 64
        R_big = 0.3 * random_symmetric_near_identity(system.r0 / 2, P, seed=2)
        v_tilde = rng.uniform(-3, 3, size=(3, P))
        psi = TransportCoeffSystem(4)
        U = compute_Uk(system, amplitudes(system, psi, R_big, v_tilde, 1.7))
        checks += [
            _check(suite, "U0_equals_R", np.abs(U.R - R_big).max(), 1e-10),
            _check(suite, "Um_symmetric", U.symmetry_defect(), 1e-12),
            _check(suite, "Um_trace_identity", U.trace_identity_defect(), 1e-10),
        ]
        return checks

    def _psi(self) -> List[InvariantCheck]:
        suite = "psi"
        psi = TransportCoeffSystem(4)
        ks, _, _ = self.system.all_wavevectors()
        rng = np.random.default_rng(self.config.noise.seed)
        partition = derivative = 0.0
        for k in ks[rng.choice(len(ks), size=20, replace=False)]:
            v = rng.uniform(-5, 5, size=(3, 500))
            tau = rng.uniform(0, 10, size=500)
            values = psi.psi(v, tau, k)
            partition = max(partition, float(np.abs(np.sum(np.abs(values) ** 2, axis=0) - 1).max()))
            numeric = tau_derivative(psi, v, tau, k) + 1j * (k @ v) * values
            analytic = psi.material_derivative(v, tau, k)
            scale = max(1.0, float(np.abs(analytic).max()))
            derivative = max(derivative, float(np.abs(numeric - analytic).max()) / scale)
        return [
            _check(suite, "partition_of_unity", partition, 1e-10),
            _check(suite, "transport_derivative", derivative, 1e-6),
        ]

    def _operators(self) -> List[InvariantCheck]:
        suite = "operators"
        v = random_field(16, "vector", seed=self.config.noise.seed, kmax=4)
        Rv = inverse_divergence_R(v)
        checks = [
            _check(suite, "div_R_flat", sup_norm(divergence(Rv) - (v - _mean_field(v))), 1e-10),
            _check(suite, "div_P_flat", sup_norm(divergence(leray_P(v))), 1e-10),
            _check(suite, "R_symmetric_traceless", sup_norm(Rv - Rv.transpose()) + sup_norm(Rv.trace()), 1e-12),
        ]

        N = 32
        frame = shear_frame(N)
        w = random_field(N, "vector", seed=self.config.noise.seed + 1, kmax=3)
        flat_mean = _mean_field(compose_with_flow(w, frame, "inverse"))
        checks += [
            _check(suite, "div_R_conjugated", sup_norm(div_phi(R_phi(w, frame), frame) - (w - flat_mean)), 1e-5),
            _check(suite, "div_P_conjugated", sup_norm(div_phi(P_phi(w, frame), frame)), 1e-5),
        ]

        # measured constants of the convolution and composition estimates
        f = random_field(N, "scalar", seed=3, kmax=6)
        g = random_field(N, "scalar", seed=4, kmax=6)
        convolution = SpectralField("scalar", TWO_PI**3 * f.coeffs * g.coeffs)
        lhs = besov_norm(convolution, -0.5).besov_value
        rhs = besov_norm(f, -0.4, p=2).besov_value * np.sqrt(TWO_PI**3 * np.sum(np.abs(g.coeffs) ** 2))
        checks.append(_check(suite, "besov_convolution_constant", lhs / rhs, None))
        lipschitz = float(np.linalg.norm(frame.jacobian, axis=(0, 1), ord=None).max())
        composed = holder_norm(compose_with_flow(f, frame), 0.5).holder_value
        checks.append(_check(suite, "composition_constant",
                             composed / (lipschitz**0.5 * holder_norm(f, 0.5).holder_value), None))
        return checks

    def _flow(self) -> List[InvariantCheck]:
        suite, N = "flow", 16
        settings = self.config.noise
        if settings.sigma == "none" or settings.amplitude == 0:
            settings = settings.model_copy(update={"sigma": "abc", "amplitude": 0.05})
        noise = NoiseConfig.from_settings(settings, N)
        driver = sample_brownian(noise)
        varsigma = self.config.schedule.varsigma0
        path = driver.mollified(0, varsigma)
        times = field_times(settings.T, 0.0, self.config.grid.dt)
        checks = []
        try:
            flow = integrate_flow(noise, path, N, times, self.config.grid.jacobian_tolerance,
                                  self.config.grid.composition_tolerance)
        except ConvexIntegrationError as exc:
            return [_check(suite, "integrate_flow", 1.0, 0.0, f"{exc.error_code}: {exc.message}")]
        checks.append(_check(suite, "jacobian_defect", flow.jacobian_log.max(), 1e-4))
        checks.append(_check(suite, "round_trip", flow.composition_log.max(), 1e-6))

        v = random_field(N, "vector", seed=settings.seed, kmax=3)
        before = TWO_PI**3 * np.sum(np.abs(v.coeffs) ** 2)
        after = TWO_PI**3 * np.sum(np.abs(compose_with_flow(v, flow[len(flow) - 1], "inverse").coeffs) ** 2)
        # the discrete flow preserves energy up to its Jacobian defect
        checks.append(_check(suite, "energy_invariance", abs(after - before) / before,
                             max(1e-6, 2 * float(flow.jacobian_log.max()))))

        # RK4 against a DOP853 oracle driven by a spline of the same forcing
        points = np.random.default_rng(settings.seed).uniform(0, TWO_PI, size=(3, 8))
        end = float(times[-1])
        ours = integrate_points(noise.sigma_fields, path, points, 0.0, end)
        velocity = NoiseVelocity(noise.sigma_fields)
        forcing = CubicSpline(path.times, path.d1, axis=1)
        rhs = lambda t, y: velocity(y.reshape(3, -1), forcing(t)).ravel()
        oracle = solve_ivp(rhs, (0.0, end), points.ravel(), method="DOP853", rtol=1e-11, atol=1e-12,
                           max_step=path.dt)
        checks.append(_check(suite, "rk4_vs_dop853", np.abs(oracle.y[:, -1].reshape(3, -1) - ours).max(), 1e-5))
        return checks

    def _step(self) -> List[InvariantCheck]:
        suite, N = "step", 32
        system = self.system
        times = field_times(0.25, 0.125, 1 / 16)
        state = zero_state(identity_flow(N, times, 0))
        schedule = surrogate_schedule(n_levels=2, N=N, dt=1 / 16, max_component=system.max_component)
        p, nxt = schedule.level(0), schedule.level(1)
        energy = get_energy_profile(self.config.energy)
        e_min, e_max = energy_bounds(self.config.energy, float(times[-1]))
        eta = choose_eta(system.r0, e_min, e_max, measure_mollification_constant(N, p.ell))
        params = StepParameters(lam=p.lam, mu=p.mu, ell=p.ell, delta_next=nxt.delta, eta=eta,
                                t_stop=float(times[-1]))
        result = convex_integration_step(state, identity_flow(N, times, 1), system, TransportCoeffSystem(p.mu),
                                         energy, params)
        new = result.state
        scale = max(1.0, max(sup_norm(f) for f in result.decomposition.total.frames))
        positive = np.nonzero(times >= 0)[0]
        kinetic = new.kinetic_energy()
        e = energy(times)
        energy_ratio = max(abs(kinetic[i] - e[i] * (1 - nxt.delta)) / (nxt.delta * e[i]) for i in positive)
        tensor = max(sup_norm(R - R.transpose()) + sup_norm(R.trace()) for R in new.R.frames)
        oscillation = max(sup_norm(f) for f in result.decomposition.parts["oscillation"].frames)
        return [
            _check(suite, "parts_sum_to_total", result.diagnostics["sum_defect"], 1e-8 * scale),
            _check(suite, "energy_matching", energy_ratio, 0.3),
            _check(suite, "reynolds_symmetric_traceless", tensor, 1e-10),
            _check(suite, "euler_reynolds_residual", euler_reynolds_residual(new).max(), 1e-8 * scale),
            _check(suite, "pump_domain", pump_domain_defect(result.pump), 0.5),
            _check(suite, "wo_divergence_free", max(sup_norm(divergence(f)) for f in result.w_o.frames), 1e-9),
            _check(suite, "beltrami_oscillation_part", oscillation, 1e-10),
        ]

    # ------------------------------------------------------------------

    SUITES: Dict[str, str] = {
        "beltrami": "Beltrami identities, space averages under a flow, stationary phase",
        "geometry": "Geometric lemma reconstruction and the W⊗W mode identities",
        "psi": "Partition of unity and transport derivative of ψ",
        "operators": "Inverse divergence and Leray projections, flat and conjugated",
        "flow": "Measure preservation, round trip, energy invariance, ODE oracle",
        "step": "One step from the zero state with noise off",
    }

    def _runner(self, suite: str) -> Callable[[], List[InvariantCheck]]:
        return getattr(self, f"_{suite}")

    def run(self, suite: str = "all", strict: bool = False) -> VerificationReport:
        """Run one suite or all of them; strict raises VerificationFailure on the first failed report"""
        if suite != "all" and suite not in self.SUITES:
            raise VerificationFailure(f"Unknown suite '{suite}' (known: all, {', '.join(self.SUITES)})")
        names = list(self.SUITES) if suite == "all" else [suite]
        report = VerificationReport(suites=names)
        for name in names:
            log(f"🔍 [VERIFY] running {name}", "DEBUG")
            checks = self._runner(name)()
            report.checks.extend(checks)
            for check in checks:
                bound = "—" if check.bound is None else f"{check.bound:.1e}"
                mark = "✅" if check.passed else "❌"
                log(f"{mark} [VERIFY] {name}.{check.name}: {check.measured:.3e} (bound {bound}) {check.detail}".rstrip())
        if strict and report.failed:
            first = report.failed[0]
            raise VerificationFailure(f"{first.suite}.{first.name}: {first.measured:.3e} > {first.bound}")
        return report


def _mean_field(v: SpectralField) -> SpectralField:
    """The constant field equal to the mean of v"""
    coeffs = np.zeros_like(v.coeffs)
    coeffs[..., 0, 0, 0] = v.coeffs[..., 0, 0, 0]
    return SpectralField(v.shape, coeffs, v.is_real)


def get_suite_info() -> Dict[str, str]:
    return dict(VerificationService.SUITES)


# Global instance
verification_service = VerificationService()
