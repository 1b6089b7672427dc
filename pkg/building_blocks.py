"""
Building blocks of the perturbation: Beltrami wave geometry on an integer sphere, lattice transport
coefficients ψ, the energy pumping term with its γ extension, amplitudes a_k and the W⊗W modes.
"""
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from config import log
from models import GeometryError, InvalidFieldError, ParameterError, StepError
from torus_spectral import (TWO_PI, SpaceTimeField, SpectralField, c1_norm, field_from_function,
                            field_from_samples, grid_points, mollify_space, partial, sup_norm)

_EYE = np.eye(3)
_KLEIN = np.array([(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)])
_CYCLIC = [(0, 1, 2), (1, 2, 0), (2, 0, 1)]
_ANTICYCLIC = [(0, 2, 1), (2, 1, 0), (1, 0, 2)]
_MAX_SEARCH = 4000


def vec6(S: np.ndarray) -> np.ndarray:
    """(xx, yy, zz, xy, xz, yz) of symmetric matrices with leading (3, 3) axes"""
    return np.stack([S[0, 0], S[1, 1], S[2, 2], S[0, 1], S[0, 2], S[1, 2]])


def unvec6(v: np.ndarray) -> np.ndarray:
    xx, yy, zz, xy, xz, yz = v
    return np.stack([np.stack([xx, xy, xz]), np.stack([xy, yy, yz]), np.stack([xz, yz, zz])])


# ---------------------------------------------------------------------------
# Geometric lemma
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WavevectorFamily:
    """One Λ_j, stored as one representative per ±pair"""
    index: int
    pairs: np.ndarray
    synthesis: np.ndarray
    pseudo_inverse: np.ndarray
    amplitudes: np.ndarray
    complex_directions: np.ndarray

    @property
    def unit(self) -> np.ndarray:
        return self.pairs / np.linalg.norm(self.pairs, axis=1, keepdims=True)

    def projectors(self) -> np.ndarray:
        """M_k = Id − k̂⊗k̂ per pair, shape (P, 3, 3)"""
        u = self.unit
        return _EYE[None] - np.einsum("pi,pj->pij", u, u)

    def linear_forms(self, R: np.ndarray) -> np.ndarray:
        """ℓ_k(R) per pair for R with leading (3, 3) axes"""
        return np.tensordot(self.pseudo_inverse, vec6(R), axes=1)

    def gamma(self, R: np.ndarray) -> np.ndarray:
        forms = self.linear_forms(R)
        if (forms <= 0).any():
            raise StepError(f"family {self.index}: R left the domain of the geometric lemma")
        return np.sqrt(forms)

    def reconstruct(self, R: np.ndarray) -> np.ndarray:
        """½ Σ_{k∈Λ_j} γ_k(R)² M_k, summed over both signs of each pair"""
        return unvec6(np.tensordot(self.synthesis, self.linear_forms(R), axes=1))

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.synthesis))


def _plane_families(a: int, b: int) -> List[np.ndarray]:
    """(a,±b,0), (0,a,±b), (±b,0,a) and the copy with a, b swapped"""
    out = []
    for p, q in ((a, b), (b, a)):
        out.append(np.array([(p, q, 0), (p, -q, 0), (0, p, q), (0, p, -q), (q, 0, p), (-q, 0, p)]))
    return out


def _triple_families(a: int, b: int, c: int) -> List[np.ndarray]:
    """cyclic and anticyclic permutations, each times the even sign flips"""
    base = np.array([a, b, c])
    return [np.array([base[list(perm)] * signs for perm in perms for signs in _KLEIN])
            for perms in (_CYCLIC, _ANTICYCLIC)]


def _sphere_families(norm_sq: int) -> List[np.ndarray]:
    families = []
    limit = math.isqrt(norm_sq)
    for a in range(limit, -1, -1):
        for b in range(a - 1, -1, -1):
            for c in range(b - 1, -1, -1):
                if a * a + b * b + c * c != norm_sq:
                    continue
                if c == 0 and b > 0:
                    families.extend(_plane_families(a, b))
                elif c > 0:
                    families.extend(_triple_families(a, b, c))
    return families


def _reference_direction(k: np.ndarray) -> np.ndarray:
    """A_k: unit projection of a fixed reference onto k⊥, scaled to 1/√2"""
    unit = k / np.linalg.norm(k)
    for reference in _EYE:
        projected = reference - (reference @ unit) * unit
        norm = np.linalg.norm(projected)
        if norm > 0.1:
            return projected / norm / np.sqrt(2)
    raise GeometryError(f"no admissible amplitude direction for k={k}")


def _build_family(index: int, pairs: np.ndarray) -> WavevectorFamily:
    unit = pairs / np.linalg.norm(pairs, axis=1, keepdims=True)
    projectors = _EYE[None] - np.einsum("pi,pj->pij", unit, unit)
    synthesis = vec6(np.moveaxis(projectors, 0, -1))
    amplitudes = np.array([_reference_direction(k) for k in pairs])
    complex_directions = amplitudes + 1j * np.cross(unit, amplitudes)
    return WavevectorFamily(index, pairs, synthesis, la.pinv(synthesis), amplitudes, complex_directions)


@dataclass(frozen=True)
class BeltramiSystem:
    lambda0_sq: int
    families: Tuple[WavevectorFamily, ...]
    r0: float

    @property
    def lambda0(self) -> float:
        return float(np.sqrt(self.lambda0_sq))

    @property
    def max_component(self) -> int:
        return int(max(np.abs(f.pairs).max() for f in self.families))

    def all_wavevectors(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Every k with both signs: (k, E_k, family index)"""
        ks, Es, js = [], [], []
        for family in self.families:
            ks.extend([family.pairs, -family.pairs])
            Es.extend([family.complex_directions, np.conj(family.complex_directions)])
            js.extend([np.full(len(family.pairs), family.index)] * 2)
        return np.concatenate(ks), np.concatenate(Es), np.concatenate(js)

    def manifest(self) -> Dict:
        return {
            "lambda0_sq": self.lambda0_sq,
            "lambda0": self.lambda0,
            "r0": self.r0,
            "families": [
                {
                    "index": f.index,
                    "pairs": f.pairs.tolist(),
                    "A_k": f.amplitudes.tolist(),
                    "linear_forms_at_identity": f.linear_forms(_EYE).tolist(),
                    "rank": f.rank(),
                }
                for f in self.families
            ],
        }


def _frobenius_gradient_norm(pseudo_inverse: np.ndarray) -> np.ndarray:
    """‖H_k‖_F of ℓ_k(R) = ⟨H_k, R⟩_F, with off-diagonal vec6 entries counted once"""
    diagonal, off = pseudo_inverse[:, :3], pseudo_inverse[:, 3:]
    return np.sqrt(np.sum(diagonal**2, axis=1) + 0.5 * np.sum(off**2, axis=1))


def construct_beltrami_system(min_norm_sq: int = 101, n_families: int = 8) -> BeltramiSystem:
    """Eight disjoint spanning families on the smallest admissible integer sphere ≥ min_norm_sq"""
    for norm_sq in range(min_norm_sq, min_norm_sq + _MAX_SEARCH):
        candidates = _sphere_families(norm_sq)
        families = []
        for pairs in candidates:
            family = _build_family(len(families), pairs)
            if family.rank() == 6 and (family.linear_forms(_EYE) > 0).all():
                families.append(family)
            if len(families) == n_families:
                break
        if len(families) < n_families:
            continue
        radius = min(float(np.min(f.linear_forms(_EYE) / _frobenius_gradient_norm(f.pseudo_inverse)))
                     for f in families)
        system = BeltramiSystem(norm_sq, tuple(families), 0.9 * radius)
        log(f"🔷 [GEOMETRY] |k|²={norm_sq}: {n_families} families, r0={system.r0:.4f}", "DEBUG")
        return system
    raise GeometryError(f"no sphere with |k|² in [{min_norm_sq}, {min_norm_sq + _MAX_SEARCH}) "
                        f"carries {n_families} disjoint spanning families")


def random_symmetric_near_identity(radius: float, count: int, seed: int = 0) -> np.ndarray:
    """count symmetric matrices with ‖R − Id‖_F = radius, shape (3, 3, count)"""
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((count, 3, 3))
    S = 0.5 * (S + np.swapaxes(S, 1, 2))
    S *= radius / np.linalg.norm(S, axis=(1, 2), keepdims=True)
    return np.moveaxis(_EYE[None] + S, 0, -1)


def beltrami_field(system: BeltramiSystem, coeffs: Dict[Tuple[int, int, int], complex], lam: int,
                   N: int, frame=None) -> SpectralField:
    """E(x) = Σ_k a_k E_k e^{iλk·φ(x)} for constant coefficients on the wavevector sphere"""
    ks, Es, _ = system.all_wavevectors()
    lookup = {tuple(k): E for k, E in zip(ks.tolist(), Es)}
    for k, a in coeffs.items():
        if tuple(k) not in lookup:
            raise InvalidFieldError(f"{k} is not on the sphere |k|²={system.lambda0_sq}")
        partner = coeffs.get(tuple(-np.asarray(k)), None)
        if partner is None or abs(partner - np.conj(a)) > 1e-12 * max(1.0, abs(a)):
            raise InvalidFieldError(f"coefficient of {tuple(-np.asarray(k))} must be conj(a_{k})")
    x = grid_points(N)
    if frame is not None and not frame.is_identity:
        x = x + frame.displacement.samples()
    values = np.zeros((3,) + (N,) * 3, dtype=complex)
    for k, a in coeffs.items():
        phase = np.exp(1j * lam * np.tensordot(np.asarray(k, dtype=float), x, axes=1))
        values += a * lookup[tuple(k)][:, None, None, None] * phase
    return field_from_samples(values.real, "vector")


# ---------------------------------------------------------------------------
# Lattice transport coefficients ψ
# ---------------------------------------------------------------------------

_CORNERS = np.array(list(itertools.product((0, 1), repeat=3)))


@dataclass(frozen=True)
class TransportCoeffSystem:
    mu: float
    c1: float = 0.90
    c2: float = 0.95

    def __post_init__(self):
        if not np.sqrt(3) / 2 < self.c1 < self.c2 < 1:
            raise ParameterError("bump radii need √3/2 < c1 < c2 < 1")

    def bump(self, r: np.ndarray) -> np.ndarray:
        s = np.clip((r - self.c1) / (self.c2 - self.c1), 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            inner = np.exp(1 - 1 / np.where(s < 1, 1 - s**2, np.inf))
        return np.where(r <= self.c1, 1.0, np.where(r >= self.c2, 0.0, inner))

    @staticmethod
    def lattice_class(l: np.ndarray) -> np.ndarray:
        """Class of l in ℤ³/(2ℤ)³, numbered 0..7"""
        return 4 * (l[0] % 2) + 2 * (l[1] % 2) + (l[2] % 2)

    def partition(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Active lattice points l (8, 3, ...) and α_l(μv) (8, ...) at v of shape (3, ...)"""
        y = self.mu * np.asarray(v, dtype=float)
        base = np.floor(y).astype(int)
        corners = base[None] + _CORNERS.reshape((8, 3) + (1,) * (y.ndim - 1))
        weights = self.bump(np.linalg.norm(y[None] - corners, axis=1))
        alpha = weights / np.sqrt(np.sum(weights**2, axis=0))
        return corners, alpha

    def psi(self, v: np.ndarray, tau, k: Sequence[float]) -> np.ndarray:
        """ψ_k^(j)(v, τ) for j = 0..7, shape (8, ...)"""
        corners, alpha = self.partition(v)
        k = np.asarray(k, dtype=float)
        phase = np.exp(-1j * np.tensordot(k, corners, axes=([0], [1])) * np.asarray(tau) / self.mu)
        out = np.zeros(alpha.shape, dtype=complex)
        classes = self.lattice_class(np.moveaxis(corners, 1, 0))
        for j in range(8):
            # the 8 corners of a unit cell fall in 8 distinct classes
            out[j] = np.sum(np.where(classes == j, alpha * phase, 0.0), axis=0)
        return out

    def psi_class(self, v: np.ndarray, tau, ks: np.ndarray, j: int) -> np.ndarray:
        """ψ_k^(j) for several k sharing one class j, shape (len(ks), ...)"""
        corners, alpha = self.partition(v)
        classes = self.lattice_class(np.moveaxis(corners, 1, 0))
        alpha = np.where(classes == j, alpha, 0.0)
        return np.stack([
            np.sum(alpha * np.exp(-1j * np.tensordot(np.asarray(k, dtype=float), corners, axes=([0], [1]))
                                  * np.asarray(tau) / self.mu), axis=0)
            for k in ks
        ])

    def material_derivative(self, v: np.ndarray, tau, k: Sequence[float]) -> np.ndarray:
        """∂_τψ + i(k·v)ψ, analytically: i Σ α_l k·(v − l/μ) e^{−ik·lτ/μ}"""
        corners, alpha = self.partition(v)
        k = np.asarray(k, dtype=float)
        phase = np.exp(-1j * np.tensordot(k, corners, axes=([0], [1])) * np.asarray(tau) / self.mu)
        offset = np.tensordot(k, np.asarray(v)[None] - corners / self.mu, axes=([0], [1]))
        terms = 1j * alpha * offset * phase
        classes = self.lattice_class(np.moveaxis(corners, 1, 0))
        return np.stack([np.sum(np.where(classes == j, terms, 0.0), axis=0) for j in range(8)])


def transport_psi(system: TransportCoeffSystem, v: np.ndarray, tau, k: Sequence[float], j: int) -> np.ndarray:
    return system.psi(v, tau, k)[j]


# ---------------------------------------------------------------------------
# Energy pumping
# ---------------------------------------------------------------------------

def choose_eta(r0: float, e_min: float, e_max: float, C_hat: float) -> float:
    """Largest η allowed by the three energy caps"""
    C_hat = max(1.0, C_hat)
    return min(r0 * e_min / 40, e_min / (8 * C_hat * (np.sqrt(e_max) + 1)), r0 * e_min / (60 * TWO_PI**3))


def measure_mollification_constant(N: int, ell: float) -> float:
    """max ‖f_ℓ − f‖_∞ / (ℓ‖f‖_{C¹}) over fixed smooth reference fields"""
    references = [
        lambda x, y, z: np.sin(x),
        lambda x, y, z: np.cos(y + z),
        lambda x, y, z: np.sin(x) * np.cos(2 * y) + 0.5 * np.sin(z),
    ]
    ratios = []
    for fn in references:
        f = field_from_function(fn, N)
        ratios.append(sup_norm(mollify_space(f, ell) - f) / (ell * c1_norm(f)))
    return float(max(ratios))


_F_PRIME_ZERO = 2 / np.pi


def _F(x):
    return (2 / np.pi) * np.arctan(x)


@dataclass(frozen=True)
class GammaExtension:
    """γ = ẽ before 𝔱, then ẽ(𝔱)(1 + ½F((f − ẽ(𝔱))/‖ẽ‖_{C²})) with f the matching quadratic"""
    t_stop: float
    value: float
    first: float
    second: float
    norm: float

    @property
    def coefficients(self) -> Tuple[float, float]:
        f1 = 2 * self.first * self.norm / (self.value * _F_PRIME_ZERO)
        f2 = 2 * self.second * self.norm / (self.value * _F_PRIME_ZERO)
        return f1, f2

    def __call__(self, t: np.ndarray) -> np.ndarray:
        s = np.asarray(t, dtype=float) - self.t_stop
        f1, f2 = self.coefficients
        quadratic = f1 * s + 0.5 * f2 * s**2
        return self.value * (1 + 0.5 * _F(quadratic / self.norm))


@dataclass(frozen=True)
class PumpState:
    times: np.ndarray
    e_tilde: np.ndarray
    gamma: np.ndarray
    rho_tilde: SpaceTimeField
    rho: SpaceTimeField
    R_big: SpaceTimeField
    eta: float
    delta_next: float
    r0: float
    t_stop: float
    extension: Optional[GammaExtension] = None


def _kinetic_energy(v: SpectralField) -> float:
    """∫|v|² dx on the unnormalized torus"""
    return float(TWO_PI**3 * np.sum(np.abs(v.coeffs) ** 2))


def energy_pump(R_ell: SpaceTimeField, v_ell: SpaceTimeField, energy: Callable[[np.ndarray], np.ndarray],
                delta_next: float, eta: float, r0: float, t_stop: float) -> PumpState:
    """ρ_ℓ = ρ̃_ℓ + γ_n with ρ̃_ℓ = (2/r0)√(η²δ² + |R̊_ℓ|²) and γ_n matching ẽ up to 𝔱"""
    times = np.asarray(R_ell.times)
    e_tilde = np.array([
        (energy(np.array([max(t, 0.0)]))[0] * (1 - delta_next) - _kinetic_energy(v)) / (3 * TWO_PI**3)
        for t, v in zip(times, v_ell.frames)
    ])
    before = times <= t_stop + 1e-12
    if (e_tilde[before] <= 0).any():
        worst = float(times[before][np.argmin(e_tilde[before])])
        raise ParameterError(f"ẽ(t) ≤ 0 at t={worst:g}: the velocity already exceeds the energy target")
    gamma = e_tilde.copy()
    extension = None
    stop_index = int(np.nonzero(before)[0][-1])
    if stop_index < len(times) - 1:
        dt = float(times[1] - times[0])
        window = e_tilde[: stop_index + 1]
        first = (window[-1] - window[-2]) / dt if len(window) > 1 else 0.0
        second = (window[-1] - 2 * window[-2] + window[-3]) / dt**2 if len(window) > 2 else 0.0
        d1 = np.diff(window) / dt if len(window) > 1 else np.zeros(1)
        d2 = np.diff(window, 2) / dt**2 if len(window) > 2 else np.zeros(1)
        norm = float(np.abs(window).max() + np.abs(d1).max() + np.abs(d2).max())
        extension = GammaExtension(float(times[stop_index]), float(window[-1]), first, second, norm)
        gamma[stop_index + 1:] = extension(times[stop_index + 1:])
    rho_tilde_frames, rho_frames, R_frames = [], [], []
    for R, g in zip(R_ell.frames, gamma):
        R_samples = R.samples()
        magnitude = np.sqrt(np.sum(R_samples**2, axis=(0, 1)))
        rho_tilde = (2 / r0) * np.sqrt(eta**2 * delta_next**2 + magnitude**2)
        rho = rho_tilde + g
        rho_tilde_frames.append(field_from_samples(rho_tilde))
        rho_frames.append(field_from_samples(rho))
        R_frames.append(field_from_samples(rho[None, None] * _EYE[:, :, None, None, None] - R_samples, "matrix"))
    return PumpState(
        times, e_tilde, gamma,
        SpaceTimeField(times, tuple(rho_tilde_frames)),
        SpaceTimeField(times, tuple(rho_frames)),
        SpaceTimeField(times, tuple(R_frames)),
        eta, delta_next, r0, t_stop, extension,
    )


def pump_domain_defect(pump: PumpState) -> float:
    """max over frames and nodes of ‖Id − R_ℓ/ρ_ℓ‖_F / r0 (≤ ½ required)"""
    worst = 0.0
    for R, rho in zip(pump.R_big.frames, pump.rho.frames):
        ratio = R.samples() / rho.samples()[None, None]
        defect = np.sqrt(np.sum((_EYE[:, :, None, None, None] - ratio) ** 2, axis=(0, 1)))
        worst = max(worst, float(defect.max()))
    return worst / pump.r0


# ---------------------------------------------------------------------------
# Amplitudes and the W⊗W decomposition
# ---------------------------------------------------------------------------

def amplitudes(system: BeltramiSystem, psi: TransportCoeffSystem, R_big: np.ndarray, v_tilde: np.ndarray,
               tau: float) -> List[np.ndarray]:
    """a_k at sample points for the representative k of every pair, per family: (P_j, ...)

    R_big = ρ Id − R̊_ℓ with R̊_ℓ traceless, so ρ is read off the trace and R_big/ρ must lie in B_r0(Id).
    """
    rho = np.trace(R_big, axis1=0, axis2=1) / 3
    if (rho <= 0).any():
        raise StepError("R_ℓ/ρ_ℓ left the ball B_r0(Id): ρ_ℓ is not positive")
    distance = np.sqrt(np.sum((R_big / rho - _EYE.reshape((3, 3) + (1,) * rho.ndim)) ** 2, axis=(0, 1)))
    if distance.max() >= system.r0:
        raise StepError(f"R_ℓ/ρ_ℓ left the ball B_r0(Id): ‖R_ℓ/ρ_ℓ − Id‖_F = {distance.max():.3e} "
                        f"≥ r0 = {system.r0:.3e}")
    out = []
    for family in system.families:
        forms = family.linear_forms(R_big)
        if (forms <= 0).any():
            raise StepError(f"family {family.index}: R_ℓ/ρ_ℓ left the ball B_r0(Id)")
        out.append(np.sqrt(forms) * psi.psi_class(v_tilde, tau, family.pairs, family.index))
    return out


def amplitude_ak(system: BeltramiSystem, psi: TransportCoeffSystem, R_big: SpectralField,
                 v_tilde: SpectralField, k: Sequence[int], j: int, tau: float) -> SpectralField:
    """a_k = 1_{k∈Λ_j} √ρ γ_k(R/ρ) ψ_k^(j)(ṽ, τ) as a complex field (√ρ γ_k(R/ρ) = √ℓ_k(R))"""
    family = system.families[j]
    k = np.asarray(k)
    matches = np.nonzero((family.pairs == k).all(axis=1))[0]
    sign = 1
    if not len(matches):
        matches = np.nonzero((family.pairs == -k).all(axis=1))[0]
        sign = -1
    if not len(matches):
        return SpectralField("scalar", np.zeros(R_big.coeffs.shape[2:], dtype=complex), False)
    values = amplitudes(system, psi, R_big.samples(), v_tilde.samples(), tau)[j][matches[0]]
    if sign < 0:
        values = np.conj(values)
    return field_from_samples(values)


@dataclass(frozen=True)
class UkDecomposition:
    modes: Dict[Tuple[int, int, int], np.ndarray]
    R: np.ndarray

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        """R + Σ_{m≠0} U_m e^{im·ξ} at phase points ξ of shape (3, P)"""
        total = self.R.astype(complex)
        for m, U in self.modes.items():
            total = total + U * np.exp(1j * (np.asarray(m, dtype=float) @ xi))
        return total

    def symmetry_defect(self) -> float:
        return max((float(np.abs(U - np.swapaxes(U, 0, 1)).max()) for U in self.modes.values()), default=0.0)

    def trace_identity_defect(self) -> float:
        """max ‖U_m m − ½Tr(U_m) m‖"""
        worst = 0.0
        for m, U in self.modes.items():
            m_vec = np.asarray(m, dtype=float)
            lhs = np.einsum("ij...,j->i...", U, m_vec)
            rhs = 0.5 * np.einsum("ii...->...", U)[None] * m_vec.reshape((3,) + (1,) * (U.ndim - 2))
            worst = max(worst, float(np.abs(lhs - rhs).max()))
        return worst


def compute_Uk(system: BeltramiSystem, family_amplitudes: Sequence[np.ndarray]) -> UkDecomposition:
    """Group Σ_{k,k'} a_k a_k' E_k⊗E_k' e^{i(k+k')·ξ} by m = k + k' at sample points"""
    ks, Es, amps = [], [], []
    for family, a in zip(system.families, family_amplitudes):
        ks.extend([family.pairs, -family.pairs])
        Es.extend([family.complex_directions, np.conj(family.complex_directions)])
        amps.extend([a, np.conj(a)])
    ks, Es, amps = np.concatenate(ks), np.concatenate(Es), np.concatenate(amps)
    tail = amps.shape[1:]
    modes: Dict[Tuple[int, int, int], np.ndarray] = {}
    for p in range(len(ks)):
        for q in range(len(ks)):
            m = tuple(int(c) for c in ks[p] + ks[q])
            term = 0.5 * (np.outer(Es[p], Es[q]) + np.outer(Es[q], Es[p])).reshape((3, 3) + (1,) * len(tail))
            contribution = term * (amps[p] * amps[q])[None, None]
            modes[m] = modes[m] + contribution if m in modes else contribution
    zero = modes.pop((0, 0, 0), np.zeros((3, 3) + tail, dtype=complex))
    return UkDecomposition(modes, zero.real)


def stationary_phase_check(factors: Sequence[Callable[[np.ndarray], np.ndarray]], k: Sequence[int], lam: int,
                           r: int, quadrature: int = 4096, N_sup: int = 32) -> Tuple[float, float]:
    """(|∫ a e^{iλk·x} dx|, (2π)³ sup|(k̂·∇)^r a| / (λ|k|)^r) for separable a = Π_d g_d(x_d)"""
    x = TWO_PI * np.arange(quadrature) / quadrature
    integral = 1.0 + 0j
    for d, g in enumerate(factors):
        integral *= TWO_PI * np.mean(g(x) * np.exp(1j * lam * k[d] * x))
    k = np.asarray(k, dtype=float)
    unit = k / np.linalg.norm(k)
    a = field_from_function(lambda x1, x2, x3: factors[0](x1) * factors[1](x2) * factors[2](x3), N_sup)
    for _ in range(r):
        a = sum((partial(a, axis) * unit[axis] for axis in range(1, 3)), partial(a, 0) * unit[0])
    bound = TWO_PI**3 * sup_norm(a) / (lam * np.linalg.norm(k)) ** r
    return float(abs(integral)), float(bound)
