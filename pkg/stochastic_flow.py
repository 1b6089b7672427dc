"""
Stochastic flow service - Brownian drivers, one-sided path mollification, step-2 lifts,
flows of the mollified noise and the flow-conjugated operators.

Flows are stored as periodic displacement fields d(x) = φ(x) − x so composition and
inversion respect periodicity. Inverses come from backward integration.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import log
from models import (CompositionError, FlowIntegrationError, InvalidFieldError, NoiseSettings,
                    ParameterError, UnderResolvedError)
from profile_registry import get_sigma_family
from torus_spectral import (TWO_PI, SpectralField, curl, derivative_wavenumbers, divergence, evaluate_at,
                            field_from_samples, gradient, grid_points, inverse_divergence_R,
                            inverse_laplacian, leray_Q, pointwise, sup_norm, wavenumbers, zeros)

_COARSE_POINTS = 256


# ---------------------------------------------------------------------------
# Noise configuration and sparse σ evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    sigma_fields: Tuple[SpectralField, ...]
    seed: int = 0
    T: float = 1.0
    T_neg: float = 0.5
    dt_path: float = 2.0**-10
    alpha: float = 0.45
    beta: float = 0.35

    def __post_init__(self):
        if self.dt_path <= 0:
            raise ParameterError("dt_path must be positive")
        for index, sigma in enumerate(self.sigma_fields):
            if sigma.shape != "vector":
                raise InvalidFieldError(f"σ_{index} must be a vector field")
            residual = sup_norm(divergence(sigma))
            if residual >= 1e-10:
                raise InvalidFieldError(f"σ_{index} is not divergence-free (‖div σ‖_∞ = {residual:.2e})")

    @classmethod
    def from_settings(cls, settings: NoiseSettings, N: int) -> "NoiseConfig":
        fields = get_sigma_family(settings.sigma, N, settings.amplitude)
        return cls(tuple(fields), settings.seed, settings.T, settings.T_neg, settings.dt_path,
                   settings.alpha, settings.beta)

    @property
    def n_components(self) -> int:
        return len(self.sigma_fields)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt_path))


class NoiseVelocity:
    """u(x) = Σ_k σ_k(x) ḃ_k evaluated through the nonzero Fourier modes of the σ_k"""

    def __init__(self, sigma_fields: Sequence[SpectralField], tol: float = 1e-13):
        self.count = len(sigma_fields)
        if not self.count:
            self.wavevectors = np.zeros((0, 3))
            self.coeffs = np.zeros((0, 0, 3), dtype=complex)
            return
        N = sigma_fields[0].N
        k = wavenumbers(N)
        magnitude = sum(np.abs(s.coeffs).max(axis=0) for s in sigma_fields)
        idx = np.argwhere(magnitude > tol * magnitude.max())
        self.wavevectors = np.stack([k[idx[:, 0]], k[idx[:, 1]], k[idx[:, 2]]], axis=1).astype(float)
        self.coeffs = np.stack([s.coeffs[:, idx[:, 0], idx[:, 1], idx[:, 2]].T for s in sigma_fields])

    def __call__(self, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        if not self.count:
            return np.zeros_like(x)
        combined = np.einsum("k,kmc->mc", weights, self.coeffs)
        return (combined.T @ np.exp(1j * (self.wavevectors @ x))).real

    def directional(self, x: np.ndarray, direction: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Σ_k ḃ_k (∇σ_k(x)) direction"""
        if not self.count:
            return np.zeros_like(x)
        combined = np.einsum("k,kmc->mc", weights, self.coeffs)
        phase = np.exp(1j * (self.wavevectors @ x)) * (1j * (self.wavevectors @ direction))
        return (combined.T @ phase).real


# ---------------------------------------------------------------------------
# Time kernel θ on (0, 1)
# ---------------------------------------------------------------------------

def _theta(u: np.ndarray) -> np.ndarray:
    w = 2 * u - 1
    return np.where(np.abs(w) < 1, (1 - w**2) ** 4, 0.0)


def _theta_prime(u: np.ndarray) -> np.ndarray:
    w = 2 * u - 1
    return np.where(np.abs(w) < 1, -16 * w * (1 - w**2) ** 3, 0.0)


def _theta_second(u: np.ndarray) -> np.ndarray:
    w = 2 * u - 1
    return np.where(np.abs(w) < 1, -32 * (1 - w**2) ** 2 * (1 - 7 * w**2), 0.0)


# ---------------------------------------------------------------------------
# Paths and lifts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MollifiedPath:
    """B_n and its first two time derivatives on the path grid"""
    times: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    varsigma: float
    level: int = 0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def at(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(B_n, Ḃ_n, B̈_n) at a time; zero for t ≤ 0"""
        if t <= 0:
            shape = self.values.shape[0]
            return np.zeros(shape), np.zeros(shape), np.zeros(shape)
        i = int(round(t / self.dt))
        return self.values[:, i], self.d1[:, i], self.d2[:, i]


def linear_path(times: np.ndarray, slope: Sequence[float], varsigma: float = 0.0) -> MollifiedPath:
    """Deterministic driver B(t) = slope·t with exact derivatives"""
    slope = np.asarray(slope, dtype=float)[:, None]
    values = slope * np.clip(times, 0, None)[None, :]
    d1 = np.broadcast_to(slope, values.shape).copy()
    return MollifiedPath(np.asarray(times), values, d1, np.zeros_like(values), varsigma)


def cumulative_lift(path: np.ndarray) -> np.ndarray:
    """I_j = Σ_{i<j} ½(X_i + X_{i+1}) ⊗ (X_{i+1} − X_i); shape (K, K, len)"""
    K, length = path.shape
    increments = np.diff(path, axis=1)
    midpoints = 0.5 * (path[:, 1:] + path[:, :-1])
    steps = np.einsum("it,jt->ijt", midpoints, increments)
    out = np.zeros((K, K, length))
    out[:, :, 1:] = np.cumsum(steps, axis=2)
    return out


def lift_increment(path: np.ndarray, cumulative: np.ndarray, s: int, t: int) -> np.ndarray:
    """𝔹_{s,t} = I_t − I_s − X_s ⊗ X_{s,t}"""
    return cumulative[:, :, t] - cumulative[:, :, s] - np.outer(path[:, s], path[:, t] - path[:, s])


def lyons_lift(path: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Iterated integrals on a pair grid: out[a, b] = 𝔹_{indices[a], indices[b]}"""
    cumulative = cumulative_lift(path)
    X = path[:, indices]
    I = cumulative[:, :, indices]
    return (I[:, :, None, :] - I[:, :, :, None]
            - np.einsum("ia,jab->ijab", X, X[:, None, :] - X[:, :, None]))


def _window_quotients(increments: np.ndarray, times: np.ndarray, exponent: float) -> np.ndarray:
    """max over u < v ≤ s of |inc(u,v)|/(t_v − t_u)^exponent, for each coarse s"""
    magnitude = np.sqrt(np.sum(increments**2, axis=tuple(range(increments.ndim - 2))))
    gaps = times[None, :] - times[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = np.where(gaps > 0, magnitude / np.abs(gaps) ** exponent, 0.0)
    per_endpoint = quotient.max(axis=0)
    return np.maximum.accumulate(per_endpoint)


def coarse_indices(n_steps: int, points: int = _COARSE_POINTS) -> np.ndarray:
    stride = max(1, n_steps // points)
    return np.arange(0, n_steps + 1, stride)


@dataclass(frozen=True)
class RoughDistance:
    path: float
    lift: float

    @property
    def value(self) -> float:
        return max(self.path, self.lift)


def rough_distance(X: np.ndarray, Y: np.ndarray, times: np.ndarray, beta: float,
                   t_stop: Optional[float] = None) -> RoughDistance:
    """max of the path and lift δ-quotients of X − Y over coarse pairs s < t ≤ t_stop"""
    if X.shape != Y.shape:
        raise InvalidFieldError("paths must share a grid")
    horizon = times[-1]
    t_stop = horizon if t_stop is None else t_stop
    if t_stop > horizon + 1e-12:
        raise ParameterError(f"t_stop={t_stop} lies beyond the horizon {horizon}")
    indices = coarse_indices(len(times) - 1)
    indices = indices[times[indices] <= t_stop + 1e-12]
    if len(indices) < 2 or X.shape[0] == 0:
        return RoughDistance(0.0, 0.0)
    t = times[indices]
    dX = X[:, indices][:, None, :] - X[:, indices][:, :, None]
    dY = Y[:, indices][:, None, :] - Y[:, indices][:, :, None]
    path_part = _window_quotients(dX - dY, t, beta)[-1]
    lift_part = _window_quotients(lyons_lift(X, indices) - lyons_lift(Y, indices), t, 2 * beta)[-1]
    return RoughDistance(float(path_part), float(lift_part))


@dataclass
class RoughDriver:
    """Brownian paths B^k on [0, T] (zero for t ≤ 0), with lazily built lifts and mollifications"""
    noise: NoiseConfig
    times: np.ndarray
    B: np.ndarray
    _mollified: Dict[Tuple[int, float], MollifiedPath] = field(default_factory=dict, repr=False)

    @cached_property
    def cumulative(self) -> np.ndarray:
        return cumulative_lift(self.B)

    def lift(self, s: int, t: int) -> np.ndarray:
        return lift_increment(self.B, self.cumulative, s, t)

    def mollified(self, level: int, varsigma: float) -> MollifiedPath:
        key = (level, float(varsigma))
        if key not in self._mollified:
            self._mollified[key] = mollify_path(self, level, varsigma)
        return self._mollified[key]

    def perturbed_after(self, t_star: float, seed: int) -> "RoughDriver":
        """Same path on [0, t*], fresh increments afterwards"""
        cut = int(np.floor(t_star / self.noise.dt_path + 1e-9))
        rng = np.random.Generator(np.random.Philox(key=seed + 1))
        fresh = rng.standard_normal((self.B.shape[0], len(self.times) - 1 - cut)) * np.sqrt(self.noise.dt_path)
        B = self.B.copy()
        B[:, cut + 1:] = B[:, cut:cut + 1] + np.cumsum(fresh, axis=1)
        return RoughDriver(self.noise, self.times, B)


def _generator(seed: int, component: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(seed << 16) | component))


def sample_brownian(noise: NoiseConfig) -> RoughDriver:
    """Independent Brownian motions with N(0, dt_path) increments, keyed by (seed, k)"""
    n = noise.n_steps
    times = noise.dt_path * np.arange(n + 1)
    B = np.zeros((noise.n_components, n + 1))
    for k in range(noise.n_components):
        increments = _generator(noise.seed, k).standard_normal(n) * np.sqrt(noise.dt_path)
        B[k, 1:] = np.cumsum(increments)
    return RoughDriver(noise, times, B)


def mollify_path(driver: RoughDriver, level: int, varsigma: float) -> MollifiedPath:
    """B_n(t) = ∫ B(t − s) θ_ς(s) ds with θ supported in (0, 1); derivatives through θ', θ''"""
    dt = driver.noise.dt_path
    if varsigma < 2 * dt - 1e-12:
        raise UnderResolvedError(f"ς_{level}={varsigma:g} is below 2·dt_path={2 * dt:g}")
    M = int(round(varsigma / dt))
    u = np.arange(M + 1) / M
    mass = _theta(u).sum()
    w0 = _theta(u) / mass
    w1 = _theta_prime(u) / (varsigma * mass)
    w2 = _theta_second(u) / (varsigma**2 * mass)
    w2 = w2 - w2.mean()
    padded = np.concatenate([np.zeros((driver.B.shape[0], M)), driver.B], axis=1)

    def convolve(weights):
        if not len(padded):
            return np.zeros_like(driver.B)
        return np.stack([np.convolve(row, weights, mode="valid") for row in padded])

    return MollifiedPath(driver.times, convolve(w0), convolve(w1), convolve(w2), varsigma, level)


# ---------------------------------------------------------------------------
# Stopping times
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StoppingReport:
    coarse_times: np.ndarray
    path_holder: np.ndarray
    lift_holder: np.ndarray
    mollification_ratio: np.ndarray
    K: np.ndarray
    t_stop: np.ndarray


def monitored_quantities(driver: RoughDriver, levels: Sequence[Tuple[int, float]] = ()) -> Tuple[np.ndarray, ...]:
    """Windowed path/lift Hölder norms and mollification ratio on the coarse grid"""
    noise = driver.noise
    indices = coarse_indices(len(driver.times) - 1)
    t = driver.times[indices]
    if noise.n_components == 0:
        zero = np.zeros(len(indices))
        return t, zero, zero, zero
    X = driver.B[:, indices]
    path_holder = _window_quotients(X[:, None, :] - X[:, :, None], t, noise.alpha)
    lift_holder = _window_quotients(lyons_lift(driver.B, indices), t, 2 * noise.alpha)
    ratio = np.zeros(len(indices))
    for level, varsigma in levels:
        Y = driver.mollified(level, varsigma).values
        dX = X[:, None, :] - X[:, :, None]
        dY = Y[:, indices][:, None, :] - Y[:, indices][:, :, None]
        path_part = _window_quotients(dX - dY, t, noise.beta)
        lift_part = _window_quotients(lyons_lift(driver.B, indices) - lyons_lift(Y, indices), t, 2 * noise.beta)
        scale = (level + 1) * varsigma ** (noise.alpha - noise.beta)
        ratio = np.maximum(ratio, np.maximum(path_part, lift_part) / scale)
    return t, path_holder, lift_holder, ratio


def compute_stopping_times(driver: RoughDriver, K_schedule: Sequence[float],
                           levels: Sequence[Tuple[int, float]] = ()) -> StoppingReport:
    """𝔱_L: last coarse time with every monitored quantity ≤ K_L, capped by K_L and T"""
    t, path_holder, lift_holder, ratio = monitored_quantities(driver, levels)
    worst = np.maximum(np.maximum(path_holder, lift_holder), ratio)
    horizon = float(driver.times[-1])
    stops = []
    for K in K_schedule:
        # windowed maxima are nondecreasing, so the admissible times form a prefix
        exceed = np.nonzero(worst > K)[0]
        if not len(exceed):
            last = horizon
        elif exceed[0] == 0:
            last = 0.0
        else:
            last = float(t[exceed[0] - 1])
        stops.append(min(last, float(K), horizon))
    return StoppingReport(t, path_holder, lift_holder, ratio, np.asarray(K_schedule, dtype=float),
                          np.asarray(stops, dtype=float))


def K_schedule(K0: float, L_max: int) -> List[float]:
    return [K0 * L for L in range(1, L_max + 1)]


def estimate_K0(settings: NoiseSettings, N: int, kappa: float, n_seeds: int,
                grid: Sequence[float] = tuple(2.0**p for p in range(-2, 11))) -> float:
    """Smallest K₀ on a geometric grid with empirical P(𝔱₁ ≥ T) ≥ κ"""
    maxima = []
    for seed in range(n_seeds):
        noise = NoiseConfig.from_settings(settings.model_copy(update={"seed": seed}), N)
        driver = sample_brownian(noise)
        _, path_holder, lift_holder, _ = monitored_quantities(driver)
        maxima.append(max(path_holder[-1], lift_holder[-1]))
    maxima = np.asarray(maxima)
    for K0 in grid:
        if np.mean((maxima <= K0) & (K0 >= settings.T)) >= kappa:
            log(f"🎯 [FLOW] K0={K0:g} reaches P(t1 ≥ T) ≥ {kappa} over {n_seeds} seeds", "DEBUG")
            return float(K0)
    raise ParameterError(f"No K0 up to {grid[-1]:g} reaches P(t1 ≥ T) ≥ {kappa}")


# ---------------------------------------------------------------------------
# Flow integration
# ---------------------------------------------------------------------------

def _rk4(velocity: NoiseVelocity, d1: np.ndarray, x: np.ndarray, start: int, stop: int,
         q: int, dt_path: float) -> np.ndarray:
    """Classical RK4 from path index start to stop in steps of q indices (either direction)"""
    if start == stop or velocity.count == 0:
        return x
    sign = 1 if stop > start else -1
    h = sign * q * dt_path
    half = sign * (q // 2)
    weight = lambda i: d1[:, i] if i > 0 else np.zeros(d1.shape[0])
    for i in range(start, stop, sign * q):
        k1 = velocity(x, weight(i))
        k2 = velocity(x + 0.5 * h * k1, weight(i + half))
        k3 = velocity(x + 0.5 * h * k2, weight(i + half))
        k4 = velocity(x + h * k3, weight(i + sign * q))
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def integrate_points(sigma_fields: Sequence[SpectralField], path: MollifiedPath, points: np.ndarray,
                     t_start: float, t_end: float, q: int = 2) -> np.ndarray:
    """Transport points along ẋ = Σ σ_k(x) Ḃ_n^k(t) from t_start to t_end (either order)"""
    dt = path.dt
    start, stop = int(round(max(t_start, 0) / dt)), int(round(max(t_end, 0) / dt))
    if (stop - start) % q:
        raise ParameterError(f"interval [{t_start}, {t_end}] is not a multiple of the flow step")
    return _rk4(NoiseVelocity(sigma_fields), path.d1, np.array(points, dtype=float), start, stop, q, dt)


def _wrap(displacement: np.ndarray) -> np.ndarray:
    return (displacement + np.pi) % TWO_PI - np.pi


@dataclass(frozen=True)
class FlowFrame:
    """φ(·, t) with its inverse and time derivatives at one field time"""
    t: float
    displacement: SpectralField
    inverse_displacement: SpectralField
    velocity: SpectralField
    acceleration: SpectralField
    is_identity: bool = False

    @property
    def N(self) -> int:
        return self.displacement.N

    def points(self) -> np.ndarray:
        return (grid_points(self.N) + self.displacement.samples()).reshape(3, -1)

    def inverse_points(self) -> np.ndarray:
        return (grid_points(self.N) + self.inverse_displacement.samples()).reshape(3, -1)

    @cached_property
    def jacobian(self) -> np.ndarray:
        """∇φ samples, shape (3, 3, N, N, N)"""
        return np.eye(3)[:, :, None, None, None] + gradient(self.displacement).samples()

    @cached_property
    def inverse_jacobian_field(self) -> SpectralField:
        """(∇φ)⁻¹ as a matrix field"""
        J = np.linalg.inv(np.moveaxis(self.jacobian, (0, 1), (-2, -1)))
        return field_from_samples(np.moveaxis(J, (-2, -1), (0, 1)), "matrix")

    def jacobian_defect(self) -> float:
        det = np.linalg.det(np.moveaxis(self.jacobian, (0, 1), (-2, -1)))
        return float(np.abs(det - 1).max())


def identity_frame(N: int, t: float = 0.0) -> FlowFrame:
    zero = zeros(N, "vector")
    return FlowFrame(t, zero, zero, zero, zero, is_identity=True)


@dataclass(frozen=True)
class FlowMap:
    times: np.ndarray
    frames: Tuple[FlowFrame, ...]
    level: int
    jacobian_log: np.ndarray
    composition_log: np.ndarray
    step: float = 0.0

    def __getitem__(self, index: int) -> FlowFrame:
        return self.frames[index]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def is_identity(self) -> bool:
        return all(frame.is_identity for frame in self.frames)


def field_times(T: float, T_neg: float, dt: float) -> np.ndarray:
    n_neg, n_pos = int(round(T_neg / dt)), int(round(T / dt))
    return dt * np.arange(-n_neg, n_pos + 1)


def identity_flow(N: int, times: np.ndarray, level: int = 0) -> FlowMap:
    return FlowMap(np.asarray(times), tuple(identity_frame(N, t) for t in times), level,
                   np.zeros(len(times)), np.zeros(len(times)))


def _flow_step(path: MollifiedPath, dt_field: float) -> int:
    """Path-index stride q: even, dividing the field step, with q·dt_path ≈ ς/32"""
    per_field = dt_field / path.dt
    if abs(per_field - round(per_field)) > 1e-9 or round(per_field) % 2:
        raise ParameterError(f"field dt={dt_field:g} must be an even multiple of dt_path={path.dt:g}")
    per_field = int(round(per_field))
    target = max(2, int(path.varsigma / (32 * path.dt))) if path.varsigma else 2
    q = 2
    while q * 2 <= target and per_field % (q * 2) == 0:
        q *= 2
    return q


def _frame_at(velocity: NoiseVelocity, path: MollifiedPath, N: int, t: float,
              forward: np.ndarray, q: int) -> FlowFrame:
    grid = grid_points(N).reshape(3, -1)
    index = int(round(t / path.dt))
    inverse = _rk4(velocity, path.d1, grid.copy(), index, 0, q, path.dt)
    _, d1, d2 = path.at(t)
    phi_dot = velocity(forward, d1)
    phi_ddot = velocity.directional(forward, phi_dot, d1) + velocity(forward, d2)
    as_field = lambda values: field_from_samples(values.reshape(3, N, N, N), "vector")
    return FlowFrame(t, as_field(_wrap(forward - grid)), as_field(_wrap(inverse - grid)),
                     as_field(phi_dot), as_field(phi_ddot))


def _composition_defect(frame: FlowFrame, n_points: int = 256) -> float:
    """max |φ⁻¹(φ(x)) − x| over a fixed sample of grid nodes"""
    N = frame.N
    rng = np.random.default_rng(0)
    flat = rng.choice(N**3, size=min(n_points, N**3), replace=False)
    grid = grid_points(N).reshape(3, -1)[:, flat]
    moved = grid + frame.displacement.samples().reshape(3, -1)[:, flat]
    back = moved + evaluate_at(frame.inverse_displacement, moved)
    return float(np.abs(_wrap(back - grid)).max())


def integrate_flow(noise: NoiseConfig, path: MollifiedPath, N: int, times: np.ndarray,
                   jacobian_tolerance: float = 1e-4, composition_tolerance: float = 1e-6) -> FlowMap:
    """φ_n on the field time grid by RK4, with inverse, φ̇, φ̈ and the measure checks"""
    times = np.asarray(times)
    if not noise.sigma_fields:
        return identity_flow(N, times, path.level)
    velocity = NoiseVelocity(noise.sigma_fields)
    dt_field = float(times[1] - times[0])
    q = _flow_step(path, dt_field)
    for attempt in range(2):
        frames, jac, comp = [], [], []
        grid = grid_points(N).reshape(3, -1)
        forward = grid.copy()
        index = 0
        for t in times:
            if t <= 0:
                frames.append(identity_frame(N, float(t)))
                jac.append(0.0)
                comp.append(0.0)
                continue
            target = int(round(t / path.dt))
            forward = _rk4(velocity, path.d1, forward, index, target, q, path.dt)
            index = target
            frame = _frame_at(velocity, path, N, float(t), forward, q)
            frames.append(frame)
            jac.append(frame.jacobian_defect())
            comp.append(_composition_defect(frame))
        jac, comp = np.asarray(jac), np.asarray(comp)
        if jac.max() <= jacobian_tolerance:
            break
        if attempt or q == 2:
            raise FlowIntegrationError(
                f"Level {path.level}: max |det ∇φ − 1| = {jac.max():.2e} exceeds {jacobian_tolerance:g}"
            )
        log(f"⚠️ [FLOW] level {path.level}: Jacobian defect {jac.max():.2e}, halving the step", "WARNING")
        q //= 2
    if comp.max() > composition_tolerance:
        raise CompositionError(
            f"Level {path.level}: max |φ⁻¹∘φ − id| = {comp.max():.2e} exceeds {composition_tolerance:g}"
        )
    log(f"🌀 [FLOW] level {path.level}: {len(times)} frames, step {q * path.dt:g}, "
        f"Jacobian defect {jac.max():.1e}, round trip {comp.max():.1e}", "DEBUG")
    return FlowMap(times, tuple(frames), path.level, jac, comp, q * path.dt)


def flow_distance(a: FlowMap, b: FlowMap) -> Tuple[float, float]:
    """sup over frames and nodes of |φ_a − φ_b| and |φ_a⁻¹ − φ_b⁻¹|"""
    forward = inverse = 0.0
    for fa, fb in zip(a.frames, b.frames):
        forward = max(forward, float(np.abs(_wrap(fa.displacement.samples() - fb.displacement.samples())).max()))
        inverse = max(inverse, float(np.abs(_wrap(
            fa.inverse_displacement.samples() - fb.inverse_displacement.samples())).max()))
    return forward, inverse


# ---------------------------------------------------------------------------
# Composition and conjugated operators
# ---------------------------------------------------------------------------

def compose_with_flow(f: SpectralField, frame: FlowFrame, direction: str = "forward") -> SpectralField:
    """f∘φ (forward) or f∘φ⁻¹ (inverse), evaluated exactly at displaced nodes"""
    if frame.is_identity:
        return f
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction}")
    points = frame.points() if direction == "forward" else frame.inverse_points()
    values = evaluate_at(f, points).reshape(f.components + (f.N,) * 3)
    return field_from_samples(values, f.shape)


def _conjugate(op, f: SpectralField, frame: FlowFrame) -> SpectralField:
    if frame.is_identity:
        return op(f)
    return compose_with_flow(op(compose_with_flow(f, frame, "inverse")), frame, "forward")


def _gradient_rows(F: SpectralField) -> np.ndarray:
    """∂_m F_{...} coefficients with the derivative index last among components"""
    ik = [1j * k for k in derivative_wavenumbers(F.N)]
    return np.stack([d * F.coeffs for d in ik], axis=len(F.components))


def div_phi(F: SpectralField, frame: FlowFrame) -> SpectralField:
    """div^φ F = [div(F∘φ⁻¹)]∘φ, evaluated as Σ_{j,m} ∂_m F_{·j} (∇φ)⁻¹_{mj}"""
    if frame.is_identity:
        return divergence(F)
    derivative = _gradient_rows(F)
    if F.shape == "vector":
        grad = SpectralField("matrix", derivative, F.is_real)
        return pointwise("jm...,mj...->...", grad, frame.inverse_jacobian_field, shape="scalar")
    if F.shape == "matrix":
        out = []
        for i in range(3):
            grad = SpectralField("matrix", derivative[i], F.is_real)
            out.append(pointwise("jm...,mj...->...", grad, frame.inverse_jacobian_field, shape="scalar").coeffs)
        return SpectralField("vector", np.stack(out), F.is_real)
    raise InvalidFieldError("div_phi needs a vector or matrix field")


def grad_phi(q: SpectralField, frame: FlowFrame) -> SpectralField:
    """∇^φ q = (∇φ)^{-T} ∇q"""
    if frame.is_identity:
        return gradient(q)
    return pointwise("mj...,m...->j...", frame.inverse_jacobian_field, gradient(q), shape="vector")


def curl_phi(v: SpectralField, frame: FlowFrame) -> SpectralField:
    if frame.is_identity:
        return curl(v)
    chain = pointwise("km...,mj...->kj...", SpectralField("matrix", _gradient_rows(v), v.is_real),
                      frame.inverse_jacobian_field, shape="matrix").coeffs
    return SpectralField("vector", np.stack([
        chain[2, 1] - chain[1, 2],
        chain[0, 2] - chain[2, 0],
        chain[1, 0] - chain[0, 1],
    ]), v.is_real)


def Q_phi(v: SpectralField, frame: FlowFrame) -> SpectralField:
    return _conjugate(leray_Q, v, frame)


def P_phi(v: SpectralField, frame: FlowFrame) -> SpectralField:
    return v - Q_phi(v, frame)


def R_phi(v: SpectralField, frame: FlowFrame) -> SpectralField:
    return _conjugate(inverse_divergence_R, v, frame)


def laplace_phi_solve(rhs: SpectralField, frame: FlowFrame) -> SpectralField:
    """Zero-mean ψ with Δ^φ ψ = rhs − mean(rhs)"""
    return _conjugate(inverse_laplacian, rhs, frame)


# ---------------------------------------------------------------------------
# Wong–Zakai rates
# ---------------------------------------------------------------------------

def _stratonovich_heun(velocity: NoiseVelocity, B: np.ndarray, x: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Heun scheme on the raw increments (Stratonovich), forward or backward in time"""
    sign = 1 if stop >= start else -1
    for i in range(start, stop, sign):
        dB = B[:, i + sign] - B[:, i]
        predictor = x + velocity(x, dB)
        x = x + 0.5 * (velocity(x, dB) + velocity(predictor, dB))
    return x


@dataclass(frozen=True)
class WongZakaiRow:
    seed: int
    level: int
    varsigma: float
    path_dist: float
    lift_dist: float
    flow_dist: float
    inv_flow_dist: float


def wong_zakai_rates(noise: NoiseConfig, levels: int, varsigma0: float, n_points: int = 64,
                     checkpoints: int = 8) -> List[WongZakaiRow]:
    """Distances between the Brownian driver/flow and the level-n mollified ones"""
    if levels < 3:
        raise ParameterError(f"Wong–Zakai rates need at least 3 levels, got {levels}")
    driver = sample_brownian(noise)
    velocity = NoiseVelocity(noise.sigma_fields)
    rng = np.random.default_rng(noise.seed)
    x0 = rng.uniform(0, TWO_PI, size=(3, n_points))
    n = noise.n_steps
    stops = (np.linspace(0, n, checkpoints + 1).astype(int)[1:] // 2) * 2
    reference, current, start = [], x0.copy(), 0
    for stop in stops:
        current = _stratonovich_heun(velocity, driver.B, current, start, stop)
        reference.append(current)
        start = stop
    reference_inverse = [_stratonovich_heun(velocity, driver.B, x0.copy(), stop, 0) for stop in stops]
    rows = []
    for level in range(levels):
        varsigma = varsigma0 * 2.0**-level
        path = driver.mollified(level, varsigma)
        distance = rough_distance(driver.B, path.values, driver.times, noise.beta)
        flow_dist = inv_dist = 0.0
        current, start = x0.copy(), 0
        for stop, ref, ref_inv in zip(stops, reference, reference_inverse):
            current = _rk4(velocity, path.d1, current, start, stop, 2, noise.dt_path)
            start = stop
            back = _rk4(velocity, path.d1, x0.copy(), stop, 0, 2, noise.dt_path)
            flow_dist = max(flow_dist, float(np.abs(current - ref).max()))
            inv_dist = max(inv_dist, float(np.abs(back - ref_inv).max()))
        rows.append(WongZakaiRow(noise.seed, level, varsigma, distance.path, distance.lift, flow_dist, inv_dist))
    log(f"🌀 [FLOW] Wong–Zakai table for seed {noise.seed}: {levels} levels", "DEBUG")
    return rows


def fitted_slope(varsigmas: Sequence[float], distances: Sequence[float]) -> float:
    """Slope of log(distance) against log(ς) by least squares"""
    x, y = np.log(np.asarray(varsigmas)), np.asarray(distances, dtype=float)
    mask = y > 0
    if mask.sum() < 2:
        return float("nan")
    return float(np.polyfit(x[mask], np.log(y[mask]), 1)[0])
