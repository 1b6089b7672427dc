"""
Convex integration step service - mollify the state, build the oscillatory perturbation and its
correctors, assemble (v, q, R̊) at the next level and split the new residual into its six parts.

Time derivatives are backward differences on the field grid, so every output frame at time t
depends only on inputs at times ≤ t. Frames at negative times repeat the t = 0 frame.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from building_blocks import BeltramiSystem, PumpState, TransportCoeffSystem, amplitudes, energy_pump
from config import log
from models import PartNorms, PartSample, StepError, UnderResolvedError
from stochastic_flow import FlowFrame, FlowMap, Q_phi, R_phi, compose_with_flow, div_phi, grad_phi
from torus_spectral import (TWO_PI, SpaceTimeField, SpectralField, besov_norm, c1_norm, constant_in_time,
                            divergence, dot, field_from_samples, grid_points, inverse_divergence_R,
                            mollify_spacetime, multiply, outer, sup_norm, time_derivative, zeros)

PART_NAMES = ("transport", "mollification_I", "mollification_II", "oscillation", "flow_error", "compressibility")


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EulerReynoldsState:
    level: int
    v: SpaceTimeField
    q: SpaceTimeField
    R: SpaceTimeField
    flow: FlowMap

    @property
    def times(self) -> np.ndarray:
        return self.v.times

    @property
    def N(self) -> int:
        return self.v.N

    def mean_v(self) -> np.ndarray:
        return np.array([frame.mean() for frame in self.v.frames])

    def kinetic_energy(self) -> np.ndarray:
        """∫|v|² dx per frame"""
        return np.array([TWO_PI**3 * np.sum(np.abs(frame.coeffs) ** 2) for frame in self.v.frames])


def zero_state(flow: FlowMap) -> EulerReynoldsState:
    """(v, q, R̊) = (0, 0, 0) on the flow's time grid"""
    N = flow[0].N
    times = flow.times
    return EulerReynoldsState(
        0,
        constant_in_time(times, zeros(N, "vector")),
        constant_in_time(times, zeros(N, "scalar")),
        constant_in_time(times, zeros(N, "matrix")),
        flow,
    )


def _per_frame(times: np.ndarray, compute: Callable[[int], SpectralField]) -> SpaceTimeField:
    """Evaluate on frames with t ≥ 0; earlier frames repeat the t = 0 frame"""
    indices = np.nonzero(times >= -1e-12)[0]
    first = int(indices[0])
    computed = {int(i): compute(int(i)) for i in indices}
    return SpaceTimeField(times, tuple(computed[max(i, first)] for i in range(len(times))))


def scalar_identity(s: SpectralField) -> SpectralField:
    """s·Id as a matrix field"""
    return SpectralField("matrix", s.coeffs[None, None] * np.eye(3)[:, :, None, None, None], s.is_real)


def euler_reynolds_residual(state: EulerReynoldsState) -> np.ndarray:
    """‖D_t v + div^φ(v⊗v) + ∇^φ q − div^φ R̊‖_∞ per frame"""
    Dt_v = time_derivative(state.v)
    out = []
    for i, frame in enumerate(state.flow.frames):
        residual = Dt_v[i] + div_phi(outer(state.v[i], state.v[i]) - state.R[i], frame) + grad_phi(state.q[i], frame)
        out.append(sup_norm(residual))
    return np.asarray(out)


def divergence_report(state: EulerReynoldsState) -> np.ndarray:
    """‖div^{φ_n} v_n‖ in B^{−1}_{∞,∞} per frame, evaluated as div(v∘φ⁻¹)"""
    values = []
    for v, frame in zip(state.v.frames, state.flow.frames):
        flat = divergence(compose_with_flow(v, frame, "inverse"))
        values.append(besov_norm(flat, -1.0).besov_value)
    return np.asarray(values)


# ---------------------------------------------------------------------------
# Step parameters and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepParameters:
    lam: int
    mu: int
    ell: float
    delta_next: float
    eta: float
    t_stop: float
    mean_tolerance: float = 1e-6


def check_resolution(N: int, lam: int, system: BeltramiSystem) -> None:
    """λ·max|k_i| + 3 < N/2 for every wavevector in use"""
    reach = lam * system.max_component + 3
    if reach >= N // 2:
        raise UnderResolvedError(
            f"λ={lam} with max|k_i|={system.max_component} needs N > {2 * reach}, got N={N}"
        )


@dataclass
class ErrorDecomposition:
    """The six pre-ℛ parts of the new residual and their sum"""
    times: np.ndarray
    parts: Dict[str, SpaceTimeField]
    total: SpaceTimeField
    flow: FlowMap
    _images: Dict[Tuple[str, int], SpectralField] = field(default_factory=dict, repr=False)

    def sum_defect(self) -> float:
        worst = 0.0
        for i in range(len(self.times)):
            summed = self.parts[PART_NAMES[0]][i]
            for name in PART_NAMES[1:]:
                summed = summed + self.parts[name][i]
            worst = max(worst, sup_norm(summed - self.total[i]))
        return worst

    def image(self, name: str, index: int) -> SpectralField:
        """ℛ(part∘φ⁻¹); its sup norm equals that of ℛ^φ part"""
        key = (name, index)
        if key not in self._images:
            flat = compose_with_flow(self.parts[name][index], self.flow[index], "inverse")
            self._images[key] = inverse_divergence_R(flat)
        return self._images[key]

    def part_samples(self, indices: Sequence[int]) -> List[PartSample]:
        """Per-frame norms: sup and C¹ of the ℛ^φ image, B^{-1}_{∞,∞} of the part itself"""
        rows = []
        for i in indices:
            for name in PART_NAMES:
                image = self.image(name, i)
                rows.append(PartSample(t=float(self.times[i]), part_name=name, sup_norm=sup_norm(image),
                                       c1_norm=c1_norm(image),
                                       besov_m1=besov_norm(self.parts[name][i], -1.0).besov_value))
        return rows

    def part_norms(self, indices: Sequence[int]) -> Dict[str, PartNorms]:
        return summarize_parts(self.part_samples(indices))


def summarize_parts(rows: Sequence[PartSample]) -> Dict[str, PartNorms]:
    """Max of each norm over frames, per part"""
    return {
        name: PartNorms(
            sup_norm=max((r.sup_norm for r in rows if r.part_name == name), default=0.0),
            c1_norm=max((r.c1_norm for r in rows if r.part_name == name), default=0.0),
            besov_m1=max((r.besov_m1 for r in rows if r.part_name == name), default=0.0),
        )
        for name in PART_NAMES
    }


@dataclass(frozen=True)
class StepResult:
    state: EulerReynoldsState
    decomposition: ErrorDecomposition
    pump: PumpState
    v_ell: SpaceTimeField
    q_ell: SpaceTimeField
    R_ell: SpaceTimeField
    w_o: SpaceTimeField
    w_c1: SpaceTimeField
    w_c2: SpaceTimeField
    diagnostics: Dict[str, float]


# ---------------------------------------------------------------------------
# Step stages
# ---------------------------------------------------------------------------

def mollify_state(state: EulerReynoldsState, ell: float) -> Tuple[SpaceTimeField, SpaceTimeField, SpaceTimeField]:
    """(v_ℓ, q_ℓ, R̊_ℓ) by one-sided space-time mollification"""
    return (mollify_spacetime(state.v, ell), mollify_spacetime(state.q, ell), mollify_spacetime(state.R, ell))


def _oscillatory_samples(system: BeltramiSystem, family_amplitudes, lam: int, frame: FlowFrame) -> np.ndarray:
    """Σ_k a_k E_k e^{iλk·φ(x)} on grid nodes, with ±k pairs combined"""
    N = frame.N
    x = grid_points(N)
    if not frame.is_identity:
        x = x + frame.displacement.samples()
    w = np.zeros((3,) + (N,) * 3)
    for family, a in zip(system.families, family_amplitudes):
        if not np.any(a):
            continue
        for p, k in enumerate(family.pairs):
            phase = np.exp(1j * lam * np.tensordot(k.astype(float), x, axes=1))
            w += 2 * np.real(family.complex_directions[p][:, None, None, None] * (a[p] * phase)[None])
    return w


def build_wo(pump: PumpState, system: BeltramiSystem, psi: TransportCoeffSystem, v_ell: SpaceTimeField,
             flow_next: FlowMap, lam: int) -> SpaceTimeField:
    """w_o(x, t) = W(x, t, λφ_{n+1}(x, t), λt) with ṽ = v_ℓ + φ̇_{n+1}"""
    def frame(i: int) -> SpectralField:
        fr = flow_next[i]
        t = max(float(v_ell.times[i]), 0.0)
        v_tilde = v_ell[i].samples() + fr.velocity.samples()
        family_amplitudes = amplitudes(system, psi, pump.R_big[i].samples(), v_tilde, lam * t)
        return field_from_samples(_oscillatory_samples(system, family_amplitudes, lam, fr), "vector")
    return _per_frame(v_ell.times, frame)


def gradient_part(state: EulerReynoldsState) -> SpaceTimeField:
    """𝒬^{φ_n} v_n per frame"""
    return _per_frame(state.times, lambda i: Q_phi(state.v[i], state.flow[i]))


def build_wc(state: EulerReynoldsState, w_o: SpaceTimeField, flow_next: FlowMap, ell: float,
             gradient: Optional[SpaceTimeField] = None) -> Tuple[SpaceTimeField, SpaceTimeField]:
    """w_c¹ = −(𝒬^{φ_n} v_n) ∗ χ_ℓ and w_c² = −𝒬^{φ_{n+1}} w_o"""
    times = state.times
    gradient = gradient if gradient is not None else gradient_part(state)
    w_c1 = -mollify_spacetime(gradient, ell)
    w_c2 = _per_frame(times, lambda i: -Q_phi(w_o[i], flow_next[i]))
    return w_c1, w_c2


def assemble_next(state: EulerReynoldsState, v_ell: SpaceTimeField, q_ell: SpaceTimeField,
                  R_ell: SpaceTimeField, w_o: SpaceTimeField, w_c1: SpaceTimeField, w_c2: SpaceTimeField,
                  pump: PumpState, flow_next: FlowMap,
                  params: StepParameters) -> Tuple[EulerReynoldsState, ErrorDecomposition]:
    """v_{n+1}, q_{n+1} = q_ℓ − ½(|w_o|² − ρ̃_ℓ), R̊_{n+1} = ℛ^{φ_{n+1}}(residual) and its six parts"""
    times = state.times
    Z = mollify_spacetime(_per_frame(times, lambda i: outer(state.v[i], state.v[i])), params.ell)
    w_c = w_c1 + w_c2
    v_next = v_ell + w_o + w_c
    correction = _per_frame(times, lambda i: 0.5 * (dot(w_o[i], w_o[i]) - pump.rho_tilde[i]))
    q_next = q_ell - correction
    Dt_wo, Dt_vell, Dt_wc, Dt_vnext = (time_derivative(f) for f in (w_o, v_ell, w_c, v_next))

    parts: Dict[str, list] = {name: [] for name in PART_NAMES}
    totals = []
    indices = np.nonzero(times >= -1e-12)[0]
    for i in indices:
        new, old = flow_next[i], state.flow[i]
        S = Z[i] + scalar_identity(q_ell[i]) - R_ell[i]
        transported = multiply(div_phi(v_ell[i], new), w_o[i])
        parts["transport"].append(Dt_wo[i] + div_phi(outer(w_o[i], v_ell[i]), new) - transported)
        parts["mollification_I"].append(div_phi(outer(v_ell[i], v_ell[i]) - Z[i], new))
        parts["mollification_II"].append(Dt_vell[i] + div_phi(S, old))
        parts["oscillation"].append(div_phi(outer(w_o[i], w_o[i]) - scalar_identity(correction[i]) + R_ell[i], new))
        parts["flow_error"].append(div_phi(S, new) - div_phi(S, old) + transported)
        parts["compressibility"].append(Dt_wc[i] + div_phi(
            outer(v_next[i], w_c[i]) + outer(w_c[i], v_next[i]) - outer(w_c[i], w_c[i]) + outer(v_ell[i], w_o[i]),
            new))
        totals.append(Dt_vnext[i] + div_phi(outer(v_next[i], v_next[i]), new) + grad_phi(q_next[i], new))

    first = int(indices[0])
    expand = lambda frames: SpaceTimeField(times, tuple(frames[max(i - first, 0)] for i in range(len(times))))
    total = expand(totals)
    decomposition = ErrorDecomposition(times, {name: expand(parts[name]) for name in PART_NAMES}, total, flow_next)

    R_frames = []
    for i, residual in zip(indices, totals):
        mean = float(np.abs(residual.mean()).max())
        scale = max(1.0, sup_norm(residual))
        if mean > params.mean_tolerance * scale:
            raise StepError(f"t={times[i]:g}: residual mean {mean:.2e} exceeds {params.mean_tolerance:g}·{scale:.2e}")
        R_frames.append(R_phi(residual, flow_next[i]))
    next_state = EulerReynoldsState(state.level + 1, v_next, q_next, expand(R_frames), flow_next)
    return next_state, decomposition


def convex_integration_step(state: EulerReynoldsState, flow_next: FlowMap, system: BeltramiSystem,
                            psi: TransportCoeffSystem, energy: Callable[[np.ndarray], np.ndarray],
                            params: StepParameters) -> StepResult:
    """One full step from level n to n + 1"""
    check_resolution(state.N, params.lam, system)
    log(f"🧩 [STEP] level {state.level} → {state.level + 1}: λ={params.lam}, μ={params.mu}, "
        f"ℓ={params.ell:g}, δ={params.delta_next:.3g}, 𝔱={params.t_stop:.3g}")
    v_ell, q_ell, R_ell = mollify_state(state, params.ell)
    pump = energy_pump(R_ell, v_ell, energy, params.delta_next, params.eta, system.r0, params.t_stop)
    w_o = build_wo(pump, system, psi, v_ell, flow_next, params.lam)
    gradient = gradient_part(state)
    w_c1, w_c2 = build_wc(state, w_o, flow_next, params.ell, gradient)
    next_state, decomposition = assemble_next(state, v_ell, q_ell, R_ell, w_o, w_c1, w_c2, pump,
                                              flow_next, params)

    # kernel-derivative form of ∂_t w_c¹ against the differenced one
    kernel_form = -mollify_spacetime(gradient, params.ell, derivative=True)
    differenced = time_derivative(w_c1)
    positive = np.nonzero(state.times > 0)[0]
    gap = max((sup_norm(kernel_form[i] - differenced[i]) for i in positive), default=0.0)

    diagnostics = {
        "wo_sup": max(sup_norm(f) for f in w_o.frames),
        "wc1_sup": max(sup_norm(f) for f in w_c1.frames),
        "wc2_sup": max(sup_norm(f) for f in w_c2.frames),
        "wc1_time_derivative_gap": float(gap),
        "sum_defect": decomposition.sum_defect(),
    }
    if diagnostics["sum_defect"] > 1e-8 * max(1.0, max(sup_norm(f) for f in decomposition.total.frames)):
        log(f"⚠️ [STEP] residual parts miss the total by {diagnostics['sum_defect']:.2e}", "WARNING")
    log(f"✅ [STEP] level {next_state.level}: ‖R̊‖_∞={max(sup_norm(f) for f in next_state.R.frames):.3e}, "
        f"‖w_o‖_∞={diagnostics['wo_sup']:.3e}", "DEBUG")
    return StepResult(next_state, decomposition, pump, v_ell, q_ell, R_ell, w_o, w_c1, w_c2, diagnostics)
