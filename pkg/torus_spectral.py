"""
Periodic field arithmetic on the 3-torus.

Fields are stored as Fourier coefficients normalized so that coeff(0) is the
spatial mean (value(x) = Σ_k c_k e^{ik·x}), in numpy FFT order. Derivatives use
wavenumbers with the Nyquist entry zeroed so that divergence∘gradient and the
laplacian agree coefficientwise and real fields stay real.
"""
import itertools
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft as sfft

import config
from models import InvalidFieldError, UnderResolvedError

TWO_PI = 2.0 * np.pi
SHAPES = ("scalar", "vector", "matrix")
_COMPONENTS = {"scalar": (), "vector": (3,), "matrix": (3, 3)}
_SHAPE_CODES = {"scalar": 0, "vector": 1, "matrix": 2}
_SNAPSHOT_MAGIC = b"SECI"
_SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIBI")
_AXES = (-3, -2, -1)


# ---------------------------------------------------------------------------
# Wavenumbers and grids
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def wavenumbers(N: int) -> np.ndarray:
    """Integer wavenumbers in FFT order, −N/2..N/2−1"""
    return np.rint(sfft.fftfreq(N, 1.0 / N)).astype(int)


@lru_cache(maxsize=16)
def derivative_wavenumbers(N: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Broadcastable (kx, ky, kz) with the Nyquist wavenumber set to zero"""
    k = wavenumbers(N).astype(float)
    k[N // 2] = 0.0
    return k[:, None, None], k[None, :, None], k[None, None, :]


@lru_cache(maxsize=16)
def _k_squared(N: int) -> np.ndarray:
    kx, ky, kz = derivative_wavenumbers(N)
    return kx**2 + ky**2 + kz**2


@lru_cache(maxsize=16)
def _k_modulus(N: int) -> np.ndarray:
    k = wavenumbers(N).astype(float)
    return np.sqrt(k[:, None, None]**2 + k[None, :, None]**2 + k[None, None, :]**2)


@lru_cache(maxsize=16)
def grid_points(N: int) -> np.ndarray:
    """Node coordinates x_j = 2πj/N, shape (3, N, N, N)"""
    x = TWO_PI * np.arange(N) / N
    return np.stack(np.meshgrid(x, x, x, indexing="ij"))


def _require_power_of_two(N: int) -> None:
    if N < 2 or N & (N - 1):
        raise InvalidFieldError(f"Grid resolution must be a power of two, got N={N}")


def _fft(samples: np.ndarray) -> np.ndarray:
    N = samples.shape[-1]
    return sfft.fftn(samples, axes=_AXES, workers=config.SECI_THREADS) / N**3


def _ifft(coeffs: np.ndarray, M: Optional[int] = None) -> np.ndarray:
    M = coeffs.shape[-1] if M is None else M
    return sfft.ifftn(coeffs, axes=_AXES, workers=config.SECI_THREADS) * M**3


# ---------------------------------------------------------------------------
# Field containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralField:
    """Scalar, vector or 3×3 matrix field on the torus in Fourier representation"""
    shape: str
    coeffs: np.ndarray
    is_real: bool = True

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidFieldError(f"Unknown field shape '{self.shape}'")
        expected = _COMPONENTS[self.shape]
        if self.coeffs.shape[:-3] != expected:
            raise InvalidFieldError(
                f"{self.shape} field needs component axes {expected}, got {self.coeffs.shape[:-3]}"
            )
        self.coeffs.setflags(write=False)

    @property
    def N(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def components(self) -> Tuple[int, ...]:
        return _COMPONENTS[self.shape]

    def samples(self) -> np.ndarray:
        values = _ifft(self.coeffs)
        return values.real if self.is_real else values

    def mean(self) -> np.ndarray:
        value = self.coeffs[..., 0, 0, 0]
        return value.real if self.is_real else value

    def _like(self, coeffs: np.ndarray, shape: Optional[str] = None) -> "SpectralField":
        return SpectralField(shape or self.shape, coeffs, self.is_real)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.shape, self.coeffs + other.coeffs, self.is_real and other.is_real)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same(self, other)
        return SpectralField(self.shape, self.coeffs - other.coeffs, self.is_real and other.is_real)

    def __neg__(self) -> "SpectralField":
        return self._like(-self.coeffs)

    def __mul__(self, factor: float) -> "SpectralField":
        return self._like(self.coeffs * factor)

    __rmul__ = __mul__

    def component(self, *index: int) -> "SpectralField":
        return SpectralField("scalar", self.coeffs[index], self.is_real)

    def transpose(self) -> "SpectralField":
        if self.shape != "matrix":
            raise InvalidFieldError("transpose needs a matrix field")
        return self._like(np.swapaxes(self.coeffs, 0, 1))

    def trace(self) -> "SpectralField":
        if self.shape != "matrix":
            raise InvalidFieldError("trace needs a matrix field")
        return SpectralField("scalar", np.einsum("ii...->...", self.coeffs), self.is_real)

    def symmetric_part(self) -> "SpectralField":
        return self._like(0.5 * (self.coeffs + np.swapaxes(self.coeffs, 0, 1)))


def _check_same(a: SpectralField, b: SpectralField) -> None:
    if a.shape != b.shape or a.N != b.N:
        raise InvalidFieldError(f"Shape mismatch: {a.shape}/{a.N} vs {b.shape}/{b.N}")


def zeros(N: int, shape: str = "scalar") -> SpectralField:
    return SpectralField(shape, np.zeros(_COMPONENTS[shape] + (N, N, N), dtype=complex))


def constant(value: Union[float, Sequence], N: int, shape: str = "scalar") -> SpectralField:
    coeffs = np.zeros(_COMPONENTS[shape] + (N, N, N), dtype=complex)
    coeffs[..., 0, 0, 0] = np.asarray(value, dtype=float)
    return SpectralField(shape, coeffs)


def identity_matrix(N: int) -> SpectralField:
    return constant(np.eye(3), N, "matrix")


@dataclass(frozen=True)
class SpaceTimeField:
    """Frames of one field shape on a uniform time grid over [−T_neg, T]"""
    times: np.ndarray
    frames: Tuple[SpectralField, ...]

    def __post_init__(self):
        if len(self.times) != len(self.frames):
            raise InvalidFieldError("times and frames differ in length")
        if len({(f.shape, f.N) for f in self.frames}) > 1:
            raise InvalidFieldError("frames of a SpaceTimeField must share shape and N")

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, index: int) -> SpectralField:
        return self.frames[index]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def shape(self) -> str:
        return self.frames[0].shape

    @property
    def N(self) -> int:
        return self.frames[0].N

    def stacked(self) -> np.ndarray:
        return np.stack([f.coeffs for f in self.frames])

    def map(self, fn: Callable[[SpectralField], SpectralField]) -> "SpaceTimeField":
        return SpaceTimeField(self.times, tuple(fn(f) for f in self.frames))

    def combine(self, other: "SpaceTimeField", fn) -> "SpaceTimeField":
        return SpaceTimeField(self.times, tuple(fn(a, b) for a, b in zip(self.frames, other.frames)))

    def __add__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        return self.combine(other, lambda a, b: a + b)

    def __sub__(self, other: "SpaceTimeField") -> "SpaceTimeField":
        return self.combine(other, lambda a, b: a - b)

    def __neg__(self) -> "SpaceTimeField":
        return self.map(lambda f: -f)

    @classmethod
    def from_stacked(cls, times: np.ndarray, shape: str, coeffs: np.ndarray, is_real: bool = True):
        return cls(np.asarray(times), tuple(SpectralField(shape, c, is_real) for c in coeffs))


def constant_in_time(times: np.ndarray, field: SpectralField) -> SpaceTimeField:
    return SpaceTimeField(np.asarray(times), tuple(field for _ in times))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def field_from_samples(samples: np.ndarray, shape: str = "scalar") -> SpectralField:
    """Forward transform of physical grid values; trailing three axes are the grid"""
    samples = np.asarray(samples)
    if shape not in SHAPES:
        raise InvalidFieldError(f"Unknown field shape '{shape}'")
    comps = _COMPONENTS[shape]
    if samples.ndim != len(comps) + 3 or samples.shape[:-3] != comps:
        raise InvalidFieldError(f"{shape} samples need shape {comps} + (N, N, N), got {samples.shape}")
    N = samples.shape[-1]
    if samples.shape[-3:] != (N, N, N):
        raise InvalidFieldError(f"Samples must be N³ per component, got {samples.shape[-3:]}")
    _require_power_of_two(N)
    if np.isnan(samples).any():
        raise InvalidFieldError("Samples contain NaN")
    return SpectralField(shape, _fft(samples), bool(np.isrealobj(samples)))


def field_from_function(fn: Callable[..., np.ndarray], N: int, shape: str = "scalar") -> SpectralField:
    """Sample fn(x1, x2, x3) on the grid"""
    x = grid_points(N)
    values = np.asarray(fn(x[0], x[1], x[2]), dtype=float)
    values = np.broadcast_to(values, _COMPONENTS[shape] + (N, N, N))
    return field_from_samples(np.array(values), shape)


def random_field(N: int, shape: str = "scalar", seed: int = 0, kmax: Optional[int] = None,
                 decay: float = 2.0) -> SpectralField:
    """Real band-limited random field, |k_i| ≤ kmax, amplitudes ∝ (1+|k|)^−decay"""
    kmax = N // 2 - 1 if kmax is None else min(kmax, N // 2 - 1)
    rng = np.random.default_rng(seed)
    comps = _COMPONENTS[shape]
    samples = rng.standard_normal(comps + (N, N, N))
    coeffs = _fft(samples)
    k = wavenumbers(N)
    mask = (np.abs(k)[:, None, None] <= kmax) & (np.abs(k)[None, :, None] <= kmax) \
        & (np.abs(k)[None, None, :] <= kmax)
    coeffs = coeffs * mask * (1.0 + _k_modulus(N)) ** (-decay)
    field = SpectralField(shape, coeffs)
    if shape == "matrix":
        field = field.symmetric_part()
    return field


# ---------------------------------------------------------------------------
# Calculus
# ---------------------------------------------------------------------------

def _ik(N: int) -> List[np.ndarray]:
    return [1j * k for k in derivative_wavenumbers(N)]


def gradient(f: SpectralField) -> SpectralField:
    """∇ of a scalar (vector out) or of a vector ((∇u)_{ij} = ∂_j u_i, matrix out)"""
    ik = _ik(f.N)
    if f.shape == "scalar":
        return f._like(np.stack([d * f.coeffs for d in ik]), "vector")
    if f.shape == "vector":
        return f._like(np.stack([np.stack([ik[j] * f.coeffs[i] for j in range(3)]) for i in range(3)]),
                       "matrix")
    raise InvalidFieldError("gradient needs a scalar or vector field")


def partial(f: SpectralField, axis: int) -> SpectralField:
    return f._like(_ik(f.N)[axis] * f.coeffs)


def divergence(F: SpectralField) -> SpectralField:
    """Divergence of a vector, or row-wise divergence (div M)_i = Σ_j ∂_j M_ij"""
    ik = _ik(F.N)
    if F.shape == "vector":
        return F._like(sum(ik[j] * F.coeffs[j] for j in range(3)), "scalar")
    if F.shape == "matrix":
        return F._like(np.stack([sum(ik[j] * F.coeffs[i, j] for j in range(3)) for i in range(3)]),
                       "vector")
    raise InvalidFieldError("divergence needs a vector or matrix field")


def laplacian(f: SpectralField) -> SpectralField:
    return f._like(-_k_squared(f.N) * f.coeffs)


def curl(v: SpectralField) -> SpectralField:
    if v.shape != "vector":
        raise InvalidFieldError("curl needs a vector field")
    ik = _ik(v.N)
    c = v.coeffs
    return v._like(np.stack([
        ik[1] * c[2] - ik[2] * c[1],
        ik[2] * c[0] - ik[0] * c[2],
        ik[0] * c[1] - ik[1] * c[0],
    ]))


def inverse_laplacian(f: SpectralField) -> SpectralField:
    """Zero-mean u with Δu = f − mean(f)"""
    k2 = _k_squared(f.N)
    safe = np.where(k2 > 0, k2, 1.0)
    return f._like(np.where(k2 > 0, -f.coeffs / safe, 0.0))


def leray_Q(v: SpectralField) -> SpectralField:
    """Gradient part plus mean: Q v = ∇ψ + mean(v) with Δψ = div v"""
    if v.shape != "vector":
        raise InvalidFieldError("leray_Q needs a vector field")
    kx, ky, kz = derivative_wavenumbers(v.N)
    k2 = _k_squared(v.N)
    safe = np.where(k2 > 0, k2, 1.0)
    kdotv = kx * v.coeffs[0] + ky * v.coeffs[1] + kz * v.coeffs[2]
    q = np.stack([k * kdotv / safe for k in (kx, ky, kz)])
    q = np.where(k2 > 0, q, 0.0)
    q[:, 0, 0, 0] = v.coeffs[:, 0, 0, 0]
    return v._like(q)


def leray_P(v: SpectralField) -> SpectralField:
    """Projection on zero-average divergence-free fields"""
    return v - leray_Q(v)


def inverse_divergence_R(v: SpectralField) -> SpectralField:
    """Symmetric trace-free R v with div(R v) = v − mean(v)"""
    if v.shape != "vector":
        raise InvalidFieldError("inverse_divergence_R needs a vector field")
    u = inverse_laplacian(v)
    grad_Pu = gradient(leray_P(u)).coeffs
    grad_u = gradient(u).coeffs
    div_u = divergence(u).coeffs
    eye = np.eye(3)[:, :, None, None, None]
    coeffs = 0.25 * (grad_Pu + np.swapaxes(grad_Pu, 0, 1)) \
        + 0.75 * (grad_u + np.swapaxes(grad_u, 0, 1)) \
        - 0.5 * div_u[None, None] * eye
    return SpectralField("matrix", coeffs, v.is_real)


# ---------------------------------------------------------------------------
# Dealiased products (3/2 padding)
# ---------------------------------------------------------------------------

def _pad_axis(c: np.ndarray, axis: int, M: int) -> np.ndarray:
    c = np.moveaxis(c, axis, -1)
    h = c.shape[-1] // 2
    out = np.zeros(c.shape[:-1] + (M,), dtype=complex)
    out[..., :h] = c[..., :h]
    out[..., M - h + 1:] = c[..., h + 1:]
    # split the Nyquist mode so real fields stay real on the finer grid
    out[..., h] = 0.5 * c[..., h]
    out[..., M - h] += 0.5 * c[..., h]
    return np.moveaxis(out, -1, axis)


def _truncate_axis(c: np.ndarray, axis: int, N: int) -> np.ndarray:
    c = np.moveaxis(c, axis, -1)
    M = c.shape[-1]
    h = N // 2
    out = np.zeros(c.shape[:-1] + (N,), dtype=complex)
    out[..., :h] = c[..., :h]
    out[..., h + 1:] = c[..., M - h + 1:]
    return np.moveaxis(out, -1, axis)


def padded_samples(field: SpectralField, M: Optional[int] = None) -> np.ndarray:
    """Physical values on the 3/2-padded grid"""
    M = 3 * field.N // 2 if M is None else M
    coeffs = field.coeffs
    for axis in _AXES:
        coeffs = _pad_axis(coeffs, axis, M)
    values = _ifft(coeffs, M)
    return values.real if field.is_real else values


def from_padded_samples(values: np.ndarray, N: int, shape: str, is_real: bool = True) -> SpectralField:
    coeffs = _fft(values)
    for axis in _AXES:
        coeffs = _truncate_axis(coeffs, axis, N)
    return SpectralField(shape, coeffs, is_real)


def pointwise(subscripts: str, *fields: SpectralField, shape: str) -> SpectralField:
    """Dealiased pointwise einsum, e.g. pointwise('i...,j...->ij...', v, w, shape='matrix')"""
    N = fields[0].N
    values = np.einsum(subscripts, *(padded_samples(f) for f in fields))
    return from_padded_samples(values, N, shape, all(f.is_real for f in fields))


def multiply(a: SpectralField, b: SpectralField) -> SpectralField:
    """Scalar times field"""
    if a.shape != "scalar":
        a, b = b, a
    if a.shape != "scalar":
        raise InvalidFieldError("multiply needs at least one scalar factor")
    return pointwise("...,...->...", a, b, shape=b.shape)


def outer(v: SpectralField, w: SpectralField) -> SpectralField:
    return pointwise("i...,j...->ij...", v, w, shape="matrix")


def dot(v: SpectralField, w: SpectralField) -> SpectralField:
    return pointwise("i...,i...->...", v, w, shape="scalar")


# ---------------------------------------------------------------------------
# Exact evaluation at arbitrary points
# ---------------------------------------------------------------------------

def evaluate_at(field: SpectralField, points: np.ndarray) -> np.ndarray:
    """Trigonometric polynomial values at points of shape (3, P); returns (*components, P)"""
    N = field.N
    points = np.asarray(points, dtype=float)
    P = points.shape[1]
    k = wavenumbers(N).astype(float)
    comps = field.coeffs.reshape((-1, N, N, N))
    out = np.empty((comps.shape[0], P), dtype=complex)
    chunk = config.SECI_COMPOSITION_CHUNK
    for start in range(0, P, chunk):
        stop = min(start + chunk, P)
        e1, e2, e3 = (np.exp(1j * np.outer(k, points[d, start:stop])) for d in range(3))
        for c, block in enumerate(comps):
            g = (block.reshape(N * N, N) @ e3).reshape(N, N, -1)
            h = np.einsum("abp,bp->ap", g, e2)
            out[c, start:stop] = np.einsum("ap,ap->p", h, e1)
    out = out.reshape(field.components + (P,))
    return out.real if field.is_real else out


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolynomialBump:
    """Tensor-product kernel (1−s²)⁴ in space on [−1,1]³, shifted to (0,1) in time"""
    power: int = 4

    def space_profile(self, s: np.ndarray) -> np.ndarray:
        return np.where(np.abs(s) < 1, (1 - s**2) ** self.power, 0.0)

    def time_profile(self, s: np.ndarray) -> np.ndarray:
        return self.space_profile(2 * s - 1)

    def time_profile_derivative(self, s: np.ndarray) -> np.ndarray:
        u = 2 * s - 1
        inside = np.abs(u) < 1
        return np.where(inside, -4 * self.power * u * (1 - u**2) ** (self.power - 1), 0.0)

    def spatial_multiplier(self, N: int, ell: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = TWO_PI * np.arange(N) / N
        x = np.where(x > np.pi, x - TWO_PI, x)
        w = self.space_profile(x / ell)
        w = w / w.sum()
        m = sfft.fft(w)
        return m[:, None, None], m[None, :, None], m[None, None, :]

    def time_weights(self, dt: float, ell: float, derivative: bool = False) -> np.ndarray:
        """Weights on lags s_i = i·dt in [0, ℓ]; unit mass, or the derivative kernel"""
        lags = np.arange(int(np.floor(ell / dt + 1e-9)) + 1) * dt
        base = self.time_profile(lags / ell)
        mass = base.sum()
        if not derivative:
            return base / mass
        return self.time_profile_derivative(lags / ell) / (ell * mass)


def _check_ell(N: int, dt: Optional[float], ell: float) -> None:
    if ell < 2 * TWO_PI / N - 1e-12:
        raise UnderResolvedError(f"Mollification length ℓ={ell:g} below 2·(2π/N)={2 * TWO_PI / N:g}")
    if ell > np.pi:
        raise UnderResolvedError(f"Mollification length ℓ={ell:g} exceeds the half period")
    if dt is not None and dt > 0 and ell < 2 * dt - 1e-12:
        raise UnderResolvedError(f"Mollification length ℓ={ell:g} below 2·dt={2 * dt:g}")


def mollify_space(f: SpectralField, ell: float, kernel: PolynomialBump = PolynomialBump()) -> SpectralField:
    _check_ell(f.N, None, ell)
    mx, my, mz = kernel.spatial_multiplier(f.N, ell)
    return f._like(f.coeffs * mx * my * mz)


def mollify_spacetime(f: SpaceTimeField, ell: float, kernel: PolynomialBump = PolynomialBump(),
                      derivative: bool = False) -> SpaceTimeField:
    """One-sided space-time convolution; derivative=True convolves with ∂_tχ_ℓ instead"""
    _check_ell(f.N, f.dt, ell)
    weights = kernel.time_weights(f.dt, ell, derivative)
    mx, my, mz = kernel.spatial_multiplier(f.N, ell)
    stacked = f.stacked()
    out = np.zeros_like(stacked)
    for lag, w in enumerate(weights):
        if w == 0.0:
            continue
        source = np.concatenate([np.repeat(stacked[:1], lag, axis=0), stacked[: len(stacked) - lag]]) \
            if lag else stacked
        out += w * source
    out *= mx * my * mz
    is_real = f.frames[0].is_real
    return SpaceTimeField.from_stacked(f.times, f.shape, out, is_real)


def time_derivative(f: SpaceTimeField, centered: bool = False) -> SpaceTimeField:
    """Backward differences in time (frames before the first are clamped), or centered ones"""
    stacked = f.stacked()
    dt = f.dt
    out = np.zeros_like(stacked)
    if len(stacked) > 1:
        if centered:
            out[1:-1] = (stacked[2:] - stacked[:-2]) / (2 * dt)
            out[0] = (stacked[1] - stacked[0]) / dt
            out[-1] = (stacked[-1] - stacked[-2]) / dt
        else:
            out[1:] = (stacked[1:] - stacked[:-1]) / dt
    return SpaceTimeField.from_stacked(f.times, f.shape, out, f.frames[0].is_real)


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormReport:
    sup_norm: float
    holder_exponent: Optional[float] = None
    holder_value: Optional[float] = None
    holder_seminorm: Optional[float] = None
    holder_time_exponent: Optional[float] = None
    holder_time_value: Optional[float] = None
    besov_params: Optional[Tuple[float, float, float]] = None
    besov_value: Optional[float] = None
    resolved: bool = True
    warning: str = ""


def _pointwise_magnitude(values: np.ndarray) -> np.ndarray:
    if values.ndim == 3:
        return np.abs(values)
    return np.sqrt(np.sum(np.abs(values) ** 2, axis=tuple(range(values.ndim - 3))))


def sup_norm(f: SpectralField) -> float:
    return float(_pointwise_magnitude(f.samples()).max())


def c1_norm(f: SpectralField) -> float:
    """sup|f| + sup|∇f| on the grid"""
    grad = np.stack([partial(f, axis).samples() for axis in range(3)])
    return sup_norm(f) + float(_pointwise_magnitude(grad).max())


def _derivative(f: SpectralField, multi_index: Sequence[int]) -> SpectralField:
    out = f
    for axis in multi_index:
        out = partial(out, axis)
    return out


_DIRECTIONS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)])


def holder_norm(f: SpectralField, exponent: float, n_base: int = 512, seed: int = 0) -> NormReport:
    """C^{r+δ} estimate: derivative sup norms up to order r plus sampled δ-quotients of order r"""
    if not 0 < exponent <= 3:
        raise InvalidFieldError(f"Hölder exponent must lie in (0, 3], got {exponent}")
    r = int(np.ceil(exponent) - 1)
    delta = exponent - r
    N = f.N
    h = TWO_PI / N
    rng = np.random.default_rng(seed)
    base = rng.integers(0, N, size=(n_base, 3))
    sup_part = 0.0
    quotient = 0.0
    for order in range(r + 1):
        for multi_index in itertools.product(range(3), repeat=order):
            values = _derivative(f, multi_index).samples()
            sup_part = max(sup_part, float(_pointwise_magnitude(values).max()))
            if order != r:
                continue
            values = values.reshape((-1, N, N, N))
            at_base = values[:, base[:, 0], base[:, 1], base[:, 2]]
            for step_exp in range(int(np.log2(N // 2)) + 1):
                step = (N // 2) >> step_exp
                for d in _DIRECTIONS:
                    shifted = (base + step * d) % N
                    diff = values[:, shifted[:, 0], shifted[:, 1], shifted[:, 2]] - at_base
                    dist = step * h * np.linalg.norm(d)
                    q = np.sqrt(np.sum(np.abs(diff) ** 2, axis=0)).max() / dist**delta
                    quotient = max(quotient, float(q))
    return NormReport(sup_norm=sup_norm(f), holder_exponent=exponent, holder_value=sup_part + quotient,
                      holder_seminorm=quotient)


def holder_time(f: SpaceTimeField, beta: float) -> NormReport:
    """sup over frame pairs of sup_x|f(t)−f(s)|/|t−s|^β"""
    values = np.stack([frame.samples() for frame in f.frames])
    best = 0.0
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            diff = _pointwise_magnitude(values[j] - values[i]).max()
            best = max(best, float(diff / (f.times[j] - f.times[i]) ** beta))
    sup = max(float(_pointwise_magnitude(v).max()) for v in values)
    return NormReport(sup_norm=sup, holder_time_exponent=beta, holder_time_value=best)


def littlewood_paley_blocks(f: SpectralField) -> List[Tuple[int, SpectralField]]:
    """Sharp blocks: j=−1 the mean, j≥0 the annulus 2^{j−1} ≤ |k| < 2^j"""
    modulus = _k_modulus(f.N)
    j_max = int(np.ceil(np.log2(modulus.max() + 1))) + 1
    blocks = [(-1, f._like(np.where(modulus < 0.5, f.coeffs, 0.0)))]
    for j in range(0, j_max):
        mask = (modulus >= 2.0 ** (j - 1)) & (modulus < 2.0**j)
        if mask.any():
            blocks.append((j, f._like(np.where(mask, f.coeffs, 0.0))))
    return blocks


def lebesgue_norm(values: np.ndarray, p: float) -> float:
    magnitude = _pointwise_magnitude(values)
    if np.isinf(p):
        return float(magnitude.max())
    N = magnitude.shape[-1]
    return float((np.sum(magnitude**p) * (TWO_PI / N) ** 3) ** (1.0 / p))


def besov_norm(f: SpectralField, alpha: float, p: float = np.inf, q: float = np.inf) -> NormReport:
    """ℓ^q over j of 2^{jα}‖Δ_j f‖_{L^p}"""
    terms = []
    for j, block in littlewood_paley_blocks(f):
        terms.append((j, 2.0 ** (j * alpha) * lebesgue_norm(block.samples(), p)))
    values = np.array([t for _, t in terms])
    value = float(values.max()) if np.isinf(q) else float(np.sum(values**q) ** (1.0 / q))
    top_j = max(j for j, _ in terms)
    resolved = True
    warning = ""
    if value > 0 and int(np.argmax(values)) == len(values) - 1 and top_j >= int(np.log2(f.N // 2)):
        resolved = False
        warning = f"dominant block j={top_j} sits at the grid cutoff"
    return NormReport(sup_norm=sup_norm(f), besov_params=(alpha, p, q), besov_value=value,
                      resolved=resolved, warning=warning)


# ---------------------------------------------------------------------------
# Binary snapshots
# ---------------------------------------------------------------------------

def _encode(field: SpectralField) -> bytes:
    header = _HEADER.pack(_SNAPSHOT_MAGIC, _SNAPSHOT_VERSION, _SHAPE_CODES[field.shape], field.N)
    ordered = sfft.fftshift(field.coeffs, axes=_AXES)
    return header + np.ascontiguousarray(ordered).astype("<c16").tobytes()


def save_snapshot(path: Union[str, Path], fields: Union[SpectralField, Sequence[SpectralField]]) -> Path:
    """Write one record per field (a frame sequence is a concatenation of records)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = [fields] if isinstance(fields, SpectralField) else list(fields)
    with path.open("wb") as handle:
        for field in fields:
            handle.write(_encode(field))
    return path


def load_snapshot(path: Union[str, Path]) -> List[SpectralField]:
    data = Path(path).read_bytes()
    shapes = {code: name for name, code in _SHAPE_CODES.items()}
    offset = 0
    fields = []
    while offset < len(data):
        magic, version, code, N = _HEADER.unpack_from(data, offset)
        if magic != _SNAPSHOT_MAGIC or version != _SNAPSHOT_VERSION or code not in shapes:
            raise InvalidFieldError(f"{path} is not a SECI v{_SNAPSHOT_VERSION} snapshot")
        offset += _HEADER.size
        shape = shapes[code]
        count = int(np.prod(_COMPONENTS[shape], dtype=int)) * N**3
        ordered = np.frombuffer(data, dtype="<c16", count=count, offset=offset)
        offset += count * 16
        coeffs = sfft.ifftshift(ordered.reshape(_COMPONENTS[shape] + (N, N, N)), axes=_AXES).astype(complex)
        fields.append(SpectralField(shape, coeffs, _is_hermitian(coeffs)))
    return fields


def _is_hermitian(coeffs: np.ndarray, tol: float = 1e-12) -> bool:
    flipped = np.conj(np.roll(np.flip(coeffs, axis=_AXES), 1, axis=_AXES))
    scale = max(1.0, float(np.abs(coeffs).max()))
    return bool(np.abs(flipped - coeffs).max() <= tol * scale)
