"""
Scheduler service - parameter schedules, the iteration driver and the inductive-estimate checks.

Paper-mode quantities such as a^{b^n} leave floating-point range after two levels, so every
level stores base-2 logarithms and exposes clamped values. Paper mode is used for the
schedule arithmetic only; field computation runs on the surrogate schedule.
"""
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from building_blocks import (TransportCoeffSystem, choose_eta, construct_beltrami_system,
                             measure_mollification_constant)
from ci_step import (EulerReynoldsState, StepParameters, StepResult, convex_integration_step,
                     divergence_report, summarize_parts, zero_state)
from config import log
from models import (ConvexIntegrationError, EnergySample, EstimateVerdict, IterationRecord, ParameterError,
                    RunConfig, RunManifest, StepError)
from profile_registry import energy_bounds, get_energy_profile
from stochastic_flow import (K_schedule, NoiseConfig, compute_stopping_times, field_times, integrate_flow,
                             sample_brownian)
from torus_spectral import TWO_PI, c1_norm, holder_norm, sup_norm

_LOG2_MAX = 1023.0
_DELTA_FLOOR_LOG2 = -40.0
_SURROGATE_KEYS = {"a", "b", "lam", "mu", "ell_inv", "varsigma0", "L"}
_SURROGATE_LAMBDA = 32
_SURROGATE_MU = 8


def _finite(log2_value: float) -> float:
    """2^x clamped to the float range"""
    return float(2.0 ** float(np.clip(log2_value, -_LOG2_MAX, _LOG2_MAX)))


@dataclass(frozen=True)
class LevelParams:
    n: int
    log2_delta: float
    log2_D: float
    log2_L: float
    log2_ell_inv: int
    log2_varsigma: float
    log2_mu: float
    log2_lam: float
    c_ell: float = 1.0
    c_mu: float = 1.0
    c_lam: float = 1.0
    lambda_lower_ok: Optional[bool] = None
    ass_lambda_ok: Optional[bool] = None
    capped: bool = False

    @property
    def delta(self) -> float:
        return _finite(self.log2_delta)

    @property
    def D(self) -> float:
        return _finite(self.log2_D)

    @property
    def L_n(self) -> float:
        return _finite(self.log2_L)

    @property
    def ell(self) -> float:
        return _finite(-self.log2_ell_inv)

    @property
    def varsigma(self) -> float:
        return _finite(self.log2_varsigma)

    @property
    def mu(self) -> int:
        return int(round(_finite(self.log2_mu)))

    @property
    def lam(self) -> int:
        return int(round(_finite(self.log2_lam)))


@dataclass(frozen=True)
class ParamSchedule:
    mode: str
    a: float
    b: float
    c: float
    m: float
    eps: float
    L: int
    levels: List[LevelParams]
    alpha: float = 0.45
    alpha_star: float = 0.44
    r_star: int = 7
    C_ell: float = 2.0
    C_varsigma: float = 2.0
    C_mu: float = 2.0

    def level(self, n: int) -> LevelParams:
        if not 0 <= n < len(self.levels):
            raise ParameterError(f"schedule has levels 0..{len(self.levels) - 1}, asked for {n}")
        return self.levels[n]

    @property
    def holder_threshold(self) -> float:
        """ϑ < 1/(2cb + 2)"""
        return 1.0 / (2 * self.c * self.b + 2)

    @property
    def holder_threshold_local(self) -> float:
        """ϑ′ < 1/(cb + 1), the local-in-time variant"""
        return 1.0 / (self.c * self.b + 1)

    @property
    def interpolation_exponent(self) -> float:
        return 0.5 * self.holder_threshold if self.mode == "paper" else 0.25

    def identity_defect(self) -> Optional[float]:
        """|−½ + c(1+ε) + b⁴(1+ε) − cb| / cb in paper mode"""
        if self.mode != "paper":
            return None
        cb = self.c * self.b
        return abs(-0.5 + self.c * (1 + self.eps) + self.b**4 * (1 + self.eps) - cb) / cb

    def snapshot(self) -> Dict[str, Any]:
        levels = []
        for p in self.levels:
            entry = {
                "n": p.n,
                "log2_delta": p.log2_delta,
                "log2_D": p.log2_D,
                "log2_L_n": p.log2_L,
                "log2_ell_inv": p.log2_ell_inv,
                "log2_varsigma": p.log2_varsigma,
                "log2_mu": p.log2_mu,
                "log2_lambda": p.log2_lam,
                "rounding": {"c_ell": p.c_ell, "c_mu": p.c_mu, "c_lambda": p.c_lam},
            }
            if self.mode == "surrogate":
                entry.update(delta=p.delta, D=p.D, ell=p.ell, varsigma=p.varsigma, mu=p.mu, lam=p.lam,
                             lam_capped=p.capped)
            else:
                entry.update(lambda_lower_ok=p.lambda_lower_ok, ass_lambda_ok=p.ass_lambda_ok)
            levels.append(entry)
        return {
            "mode": self.mode,
            "a": self.a, "b": self.b, "c": self.c, "m": self.m, "eps": self.eps, "L": self.L,
            "alpha": self.alpha, "alpha_star": self.alpha_star, "r_star": self.r_star,
            "holder_threshold": self.holder_threshold,
            "holder_threshold_local": self.holder_threshold_local,
            "levels": levels,
        }


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def paper_schedule(a: float = 2.0, m: float = 38.0, eps: float = 15.0, L_max: int = 1, n_levels: int = 4,
                   alpha: float = 0.45, alpha_star: float = 0.44, r_star: int = 7,
                   C_ell: float = 2.0, C_varsigma: float = 2.0, C_mu: float = 2.0) -> ParamSchedule:
    """b = m + ε, c = (b⁴(1+ε) − ½)/(b − 1 − ε) and the level parameters in log space"""
    if a < 2 or m < 4 or eps <= 0:
        raise ParameterError(f"paper schedule needs a ≥ 2, m ≥ 4, ε > 0 (got a={a}, m={m}, ε={eps})")
    if not 0 < alpha_star < alpha < 0.5:
        raise ParameterError("paper schedule needs 0 < α⋆ < α < ½")
    b = m + eps
    c = (b**4 * (1 + eps) - 0.5) / (b - 1 - eps)
    la = np.log2(a)
    log2_delta = lambda n: (1 - b**n) * la
    log2_D = lambda n: c * b**n * la
    log2_varsigma = lambda n: ((4 / 3) * log2_delta(n + 3) - np.log2(C_varsigma) - np.log2(n + 1)) / alpha_star

    levels = []
    for n in range(n_levels):
        # ℓ^α = c_ℓ δ_{n+3}^{4/3} / (C_ℓ D_n) with ℓ⁻¹ a power of two and c_ℓ ∈ [1, 2)
        log2_ell0 = ((4 / 3) * log2_delta(n + 3) - np.log2(C_ell) - log2_D(n)) / alpha
        j = int(np.floor(-log2_ell0))
        c_ell = _finite(alpha * (-j - log2_ell0))
        # μ = c_μ C_μ ℓ^{−r⋆} with c_μ C_μ the next integer above C_μ
        c_mu = (np.floor(C_mu) + 1) / C_mu
        log2_mu = np.log2(c_mu * C_mu) + j * r_star
        # λ = c_λ μ² ς_{n+1}^{α−2} with c_λ ς^{α−2} ∈ ℕ
        log2_x = (alpha - 2) * log2_varsigma(n + 1)
        c_lam = (np.floor(2.0**log2_x) + 1) / 2.0**log2_x if log2_x < 52 else 1.0
        log2_lam = np.log2(c_lam) + 2 * log2_mu + log2_x
        lower = 2 * log2_mu + log2_x <= log2_lam + 1e-9
        r = r_star
        rhs = ((r + 5) * log2_mu + ((r + 5) * (alpha - 1) - 2) * log2_varsigma(n + 1)
               + np.logaddexp2(log2_D(n) + (r + 4) * j, (alpha - 1) * log2_varsigma(n + 1)))
        levels.append(LevelParams(
            n, log2_delta(n), log2_D(n), m ** (n + 1) * np.log2(L_max), j, log2_varsigma(n),
            float(log2_mu), float(log2_lam), c_ell, float(c_mu), float(c_lam),
            bool(lower), bool(r * log2_lam >= rhs),
        ))
    schedule = ParamSchedule("paper", a, b, c, m, eps, L_max, levels, alpha, alpha_star, r_star,
                             C_ell, C_varsigma, C_mu)
    log(f"📐 [SCHEDULE] paper mode: b={b:g}, c={c:.6g}, ϑ < {schedule.holder_threshold:.4g}", "DEBUG")
    return schedule


def resolved_lambda(N: int, max_component: int) -> int:
    """Largest λ with λ·max|k_i| + 3 < N/2"""
    return max(1, (N // 2 - 4) // max_component)


def _surrogate_ell_inv(delta: float, delta_next: float, N: int, dt: float) -> int:
    """ℓ⁻¹ = 2^⌈log₂(δ_n/δ_{n+1})⌉, clipped so ℓ stays resolved in space and time"""
    wanted = int(np.ceil(np.log2(delta / delta_next)))
    limit = min(N / (2 * TWO_PI), 1 / (2 * dt))
    resolved = int(np.floor(np.log2(limit))) if limit >= 1 else 0
    return max(0, min(wanted, resolved))


def surrogate_schedule(overrides: Optional[Dict[str, Any]] = None, n_levels: int = 4, N: int = 32,
                       dt: float = 1 / 16, max_component: int = 10) -> ParamSchedule:
    """Desk-scale schedule: δ_n = a^{1−b^n} capped, ς_n halving, λ_n doubling, μ_n = gcd(λ_n, 8).

    Default λ_n = 32·2^n is cut to the largest power of two the grid resolves; such levels are
    flagged `capped`. An explicit λ override is λ_0 and doubles per level without a cap.
    """
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(overrides) - _SURROGATE_KEYS
    if unknown:
        raise ParameterError(f"unknown schedule overrides: {', '.join(sorted(unknown))}")
    a = float(overrides.get("a", 2.0))
    b = float(overrides.get("b", 2.0))
    L = int(overrides.get("L", 1))
    varsigma0 = float(overrides.get("varsigma0", 2.0**-3))
    lam0 = int(overrides.get("lam", _SURROGATE_LAMBDA))
    mu = overrides.get("mu")
    if lam0 < 1 or (mu is not None and (mu < 1 or lam0 % mu)):
        raise ParameterError(f"lambda/mu must be a positive integer (lambda={lam0}, mu={mu})")
    ell_inv = overrides.get("ell_inv")
    if ell_inv is not None and (ell_inv < 1 or int(ell_inv) & (int(ell_inv) - 1)):
        raise ParameterError(f"ell_inv must be a power of two, got {ell_inv}")
    ceiling = 2 ** int(np.log2(resolved_lambda(N, max_component)))

    log2_delta = lambda n: max((1 - b**n) * np.log2(a), _DELTA_FLOOR_LOG2)
    levels = []
    for n in range(n_levels):
        if ell_inv is not None:
            j = int(np.log2(ell_inv))
        else:
            j = _surrogate_ell_inv(_finite(log2_delta(n)), _finite(log2_delta(n + 1)), N, dt)
        lam = lam0 * 2**n
        capped = "lam" not in overrides and lam > ceiling
        if capped:
            lam = ceiling
        mu_n = int(mu) if mu is not None else math.gcd(lam, _SURROGATE_MU)
        if lam % mu_n:
            raise ParameterError(f"level {n}: lambda/mu must be a positive integer (lambda={lam}, mu={mu_n})")
        levels.append(LevelParams(
            n, log2_delta(n), b**n * np.log2(a), (n + 1) * np.log2(L), j,
            float(np.log2(varsigma0) - n), float(np.log2(mu_n)), float(np.log2(lam)), capped=capped,
        ))
    capped = [p.n for p in levels if p.capped]
    if capped:
        log(f"⚠️ [SCHEDULE] N={N} resolves λ ≤ {ceiling}: levels {capped} run without scale separation "
            f"(wanted λ_n = {lam0}·2^n)", "WARNING")
    return ParamSchedule("surrogate", a, b, 1.0, 0.0, 0.0, L, levels)


def build_schedule(config: RunConfig, n_levels: int, max_component: int) -> ParamSchedule:
    settings = config.schedule
    if settings.mode == "paper":
        return paper_schedule(max(settings.a, 2.0), settings.m, settings.eps, settings.L, n_levels,
                              alpha=config.noise.alpha, alpha_star=0.5 * (config.noise.beta + config.noise.alpha))
    overrides = settings.model_dump(include=_SURROGATE_KEYS)
    return surrogate_schedule(overrides, n_levels, config.grid.N, config.grid.dt, max_component)


# ---------------------------------------------------------------------------
# Iteration records
# ---------------------------------------------------------------------------

def _stopped(times: np.ndarray, t_stop: float) -> np.ndarray:
    return np.nonzero((times >= -1e-12) & (times <= t_stop + 1e-12))[0]


def _diagnostic_subset(indices: np.ndarray, identity: bool) -> np.ndarray:
    """Every frame for identity flows, about five frames otherwise"""
    if identity or len(indices) <= 5:
        return indices
    stride = max(1, len(indices) // 4)
    return np.unique(np.append(indices[::stride], indices[-1]))


def level_record(state: EulerReynoldsState, previous: Optional[EulerReynoldsState], delta: float,
                 energy: Callable[[np.ndarray], np.ndarray], t_stop: float, exponent: float,
                 step: Optional[StepResult] = None) -> IterationRecord:
    """Measured norms of state n over [0, 𝔱]"""
    times = state.times
    indices = _stopped(times, t_stop)
    subset = _diagnostic_subset(indices, state.flow.is_identity)
    kinetic = state.kinetic_energy()
    targets = energy(np.maximum(times, 0.0)) * (1 - delta)
    samples = [
        EnergySample(t=float(times[i]), measured_energy=float(kinetic[i]),
                     target_e_times_1_minus_delta=float(targets[i]),
                     bound=float(0.25 * delta * energy(np.array([times[i]]))[0]))
        for i in indices
    ]
    divergence = divergence_report(state) if state.level else np.zeros(len(times))
    rows = step.decomposition.part_samples(subset) if step is not None else []
    record = IterationRecord(
        level=state.level,
        stopping_time=float(t_stop),
        reynolds_sup=max(sup_norm(state.R[i]) for i in indices),
        pressure_sup=max(sup_norm(state.q[i]) for i in indices),
        divergence_besov=float(divergence[indices].max()),
        velocity_c1=max(c1_norm(state.v[i]) for i in subset),
        pressure_c1=max(c1_norm(state.q[i]) for i in subset),
        reynolds_c1=max(c1_norm(state.R[i]) for i in subset),
        energy_error=float(np.abs(targets[indices] - kinetic[indices]).max()),
        energy=samples,
        parts=summarize_parts(rows) if rows else {},
        part_samples=rows,
    )
    if previous is not None:
        dv = [state.v[i] - previous.v[i] for i in indices]
        dq = [state.q[i] - previous.q[i] for i in indices]
        worst = int(np.argmax([sup_norm(f) for f in dv]))
        sup_dv = sup_norm(dv[worst])
        c1_dv = c1_norm(dv[worst])
        record = record.model_copy(update={
            "velocity_increment": max(sup_norm(f) for f in dv),
            "pressure_increment": max(sup_norm(f) for f in dq),
            "increment_c1": max(c1_norm(state.v[i] - previous.v[i]) for i in subset),
            "increment_holder": holder_norm(dv[worst], exponent).holder_seminorm,
            "interpolation_bound": 2 ** (1 - exponent) * sup_dv ** (1 - exponent) * c1_dv**exponent,
        })
    return record


# ---------------------------------------------------------------------------
# Inductive estimates
# ---------------------------------------------------------------------------

def _verdict(name: str, level: int, inequality: str, lhs: float, rhs: float,
             known_constant: bool = True) -> EstimateVerdict:
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else None)
    if lhs == 0:
        verdict = "pass"
    elif not known_constant:
        verdict = "n/a"
    else:
        verdict = "pass" if lhs <= rhs else "fail"
    return EstimateVerdict(name=name, level=level, inequality=inequality, lhs=float(lhs), rhs=float(rhs),
                           ratio=ratio, verdict=verdict)


def check_inductive_estimates(manifest: RunManifest, schedule: ParamSchedule) -> List[EstimateVerdict]:
    """Instantiate every inductive inequality with measured norms and schedule values"""
    eta = manifest.constants.get("eta", 0.0)
    verdicts = []
    for record in manifest.iterations:
        n = record.level
        p = schedule.level(n)
        energy_ratio = max((abs(s.target_e_times_1_minus_delta - s.measured_energy) / s.bound
                            for s in record.energy if s.bound > 0), default=0.0)
        verdicts.append(_verdict("est_energy", n, "max_t |e(1−δ_n) − ∫|v_n|²| / (¼δ_n e) ≤ 1", energy_ratio, 1.0))
        verdicts.append(_verdict("est_Reynolds", n, "‖R̊_n‖ ≤ η L_n δ_{n+1}",
                                 record.reynolds_sup, eta * p.L_n * schedule.level(n + 1).delta))
        past = sum(schedule.level(k).delta for k in range(n))
        verdicts.append(_verdict("est_pres", n, "‖q_n‖ ≤ M_q L_n Σ_{k<n} δ_k",
                                 record.pressure_sup, p.L_n * past, known_constant=False))
        verdicts.append(_verdict("est_div", n, "‖div^{φ_n} v_n‖_{B^{-1}} ≤ L_n δ_{n+2}^{5/4}",
                                 record.divergence_besov, p.L_n * schedule.level(n + 2).delta ** 1.25))
        verdicts.append(_verdict("C^1,1", n, "max(‖v_n‖_{C¹}, ‖q_n‖_{C¹}, ‖R̊_n‖_{C¹}) ≤ L_n D_n",
                                 max(record.velocity_c1, record.pressure_c1, record.reynolds_c1),
                                 _finite(p.log2_L + p.log2_D)))
        if n == 0 or record.velocity_increment is None:
            continue
        q = schedule.level(n - 1)
        verdicts.append(_verdict("velocity_increment", n, "‖v_n − v_{n−1}‖ ≤ M_v L_{n−1}⁴ δ_{n−1}^{1/2}",
                                 record.velocity_increment, q.L_n**4 * np.sqrt(q.delta), known_constant=False))
        verdicts.append(_verdict("pressure_increment", n, "‖q_n − q_{n−1}‖ ≤ M_q L_{n−1} δ_{n−1}",
                                 record.pressure_increment, q.L_n * q.delta, known_constant=False))
        if record.increment_holder is not None and record.interpolation_bound is not None:
            verdicts.append(_verdict("interpolation", n, "[v_n − v_{n−1}]_ϑ ≤ (2‖·‖)^{1−ϑ}‖·‖_{C¹}^ϑ",
                                     record.increment_holder, record.interpolation_bound))
    return verdicts


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass
class RunContext:
    """Objects a run observer may want besides the manifest"""
    schedule: ParamSchedule
    states: List[EulerReynoldsState] = field(default_factory=list)
    steps: List[StepResult] = field(default_factory=list)


def pumped_energy(reynolds_sup: float, eta: float, delta_next: float, r0: float) -> float:
    """3(2π)³ sup ρ̃_ℓ: energy the pump adds on top of γ for a Reynolds stress of this size"""
    return float(3 * TWO_PI**3 * (2 / r0) * np.hypot(eta * delta_next, reynolds_sup))


def run_iterations(config: RunConfig, n_max: Optional[int] = None,
                   observer: Optional[Callable[[RunManifest, RunContext], None]] = None) -> RunManifest:
    """Zero state → n_max convex integration steps; the observer sees the manifest after every update"""
    n_max = n_max or config.run.n_max
    if n_max < 1:
        raise ParameterError("n_max must be at least 1")
    N, dt = config.grid.N, config.grid.dt
    system = construct_beltrami_system(config.schedule.min_norm_sq)
    schedule = build_schedule(config, n_max + 3, system.max_component)
    manifest = RunManifest(seed=config.noise.seed, mode=config.schedule.mode, config=config,
                           schedule=schedule.snapshot())
    context = RunContext(schedule)
    notify = (lambda: observer(manifest, context)) if observer else (lambda: None)
    if schedule.mode == "paper":
        manifest.status = "partial"
        manifest.error = "PARAMETER_ERROR: paper mode only supports schedule arithmetic"
        notify()
        raise ParameterError("paper mode only supports schedule arithmetic; use mode = \"surrogate\" to run fields")

    try:
        energy = get_energy_profile(config.energy)
        times = field_times(config.noise.T, config.noise.T_neg, dt)
        e_min, e_max = energy_bounds(config.energy, config.noise.T)
        C_hat = measure_mollification_constant(N, schedule.level(0).ell)
        eta = config.schedule.eta or choose_eta(system.r0, e_min, e_max, C_hat)
        noise = NoiseConfig.from_settings(config.noise, N)
        driver = sample_brownian(noise)
        moll_levels = [(n, schedule.level(n).varsigma) for n in range(n_max + 1)]
        stopping = compute_stopping_times(driver, K_schedule(config.schedule.K0, config.schedule.L), moll_levels)
        t_stop = float(stopping.t_stop[-1])
        manifest.constants = {
            "eta": float(eta), "r0": system.r0, "C_hat": C_hat, "e_min": e_min, "e_max": e_max,
            "lambda0": system.lambda0, "K_L": float(stopping.K[-1]), "t_stop": t_stop,
        }
        log(f"🚀 [RUN] seed {config.noise.seed}: N={N}, {len(times)} frames, η={eta:.3e}, "
            f"r0={system.r0:.4f}, 𝔱={t_stop:.3g}")

        def flow(level: int):
            path = driver.mollified(level, schedule.level(level).varsigma)
            return integrate_flow(noise, path, N, times, config.grid.jacobian_tolerance,
                                  config.grid.composition_tolerance)

        state = zero_state(flow(0))
        context.states.append(state)
        manifest.append(level_record(state, None, schedule.level(0).delta, energy, t_stop,
                                     schedule.interpolation_exponent))
        notify()
        for n in range(n_max):
            p, nxt = schedule.level(n), schedule.level(n + 1)
            if n > 0:
                pumped = pumped_energy(manifest.iterations[-1].reynolds_sup, float(eta), nxt.delta, system.r0)
                allowance = 0.25 * nxt.delta * e_min
                if pumped > allowance:
                    raise StepError(
                        f"level {n}: ‖R̊_{n}‖_∞={manifest.iterations[-1].reynolds_sup:.3e} pumps {pumped:.3e} of "
                        f"energy, above the ¼δ_{n + 1}e̲={allowance:.3e} the next level may carry"
                    )
            params = StepParameters(lam=p.lam, mu=p.mu, ell=p.ell, delta_next=nxt.delta, eta=float(eta),
                                    t_stop=t_stop, mean_tolerance=config.grid.residual_tolerance)
            psi = TransportCoeffSystem(p.mu)
            result = convex_integration_step(state, flow(n + 1), system, psi, energy, params)
            manifest.append(level_record(result.state, state, nxt.delta, energy, t_stop,
                                         schedule.interpolation_exponent, result))
            state = result.state
            context.states.append(state)
            context.steps.append(result)
            record = manifest.iterations[-1]
            log(f"📈 [RUN] level {record.level}: ‖R̊‖={record.reynolds_sup:.3e}, "
                f"energy error={record.energy_error:.3e}, ‖div^φ v‖_B={record.divergence_besov:.2e}")
            notify()
    except ConvexIntegrationError as exc:
        manifest.status = "partial"
        manifest.error = f"{exc.error_code}: {exc.message}"
        manifest.verdicts = check_inductive_estimates(manifest, schedule)
        notify()
        raise

    manifest.verdicts = check_inductive_estimates(manifest, schedule)
    manifest.status = "complete"
    failed = [v.name for v in manifest.verdicts if v.verdict == "fail"]
    if failed:
        log(f"⚠️ [RUN] {len(failed)} estimate(s) fail: {', '.join(sorted(set(failed)))}", "WARNING")
    notify()
    return manifest
