from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ConvexIntegrationError(Exception):
    """Base exception for engine errors"""
    def __init__(self, message: str, error_code: str = "CONVEX_INTEGRATION_ERROR"):
        self.message = message
        self.error_code = error_code
        super().__init__(self.message)


class ConfigError(ConvexIntegrationError):
    """Raised when an experiment config is missing or fails validation"""
    def __init__(self, message: str = "Experiment configuration is invalid."):
        super().__init__(message, "CONFIG_ERROR")


class ManifestError(ConvexIntegrationError):
    """Raised when a run directory has no readable manifest"""
    def __init__(self, message: str = "Run manifest not found."):
        super().__init__(message, "MANIFEST_MISSING")


class InvalidFieldError(ConvexIntegrationError):
    """Raised for malformed field data (resolution, NaN, shape, conjugacy)"""
    def __init__(self, message: str = "Field data is malformed."):
        super().__init__(message, "INVALID_FIELD")


class UnderResolvedError(ConvexIntegrationError):
    """Raised when a length or frequency scale is below grid resolution"""
    def __init__(self, message: str = "Requested scale is not resolved by the grid."):
        super().__init__(message, "UNDER_RESOLVED")


class FlowIntegrationError(ConvexIntegrationError):
    """Raised when the flow loses measure preservation after refinement"""
    def __init__(self, message: str = "Flow integration failed after step refinement."):
        super().__init__(message, "FLOW_STEP_FAILURE")


class CompositionError(ConvexIntegrationError):
    """Raised when φ⁻¹∘φ drifts beyond the composition tolerance"""
    def __init__(self, message: str = "Composition tolerance exceeded."):
        super().__init__(message, "COMPOSITION_TOLERANCE")


class GeometryError(ConvexIntegrationError):
    """Raised when no lattice sphere yields the wavevector families"""
    def __init__(self, message: str = "Could not build disjoint spanning wavevector families."):
        super().__init__(message, "GEOMETRY_FAILURE")


class ParameterError(ConvexIntegrationError):
    """Raised for inconsistent schedule or pumping parameters"""
    def __init__(self, message: str = "Parameter schedule is inconsistent."):
        super().__init__(message, "PARAMETER_ERROR")


class StepError(ConvexIntegrationError):
    """Raised when a convex integration step breaks one of its invariants"""
    def __init__(self, message: str = "Convex integration step failed."):
        super().__init__(message, "STEP_ERROR")


class VerificationFailure(ConvexIntegrationError):
    """Raised by the verify command when an invariant check fails"""
    def __init__(self, message: str = "Verification suite failed."):
        super().__init__(message, "VERIFICATION_FAILED")


# ---------------------------------------------------------------------------
# Experiment configuration ([noise], [grid], [schedule], [energy], [run])
# ---------------------------------------------------------------------------

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseSettings(_Section):
    sigma: str = "abc"  # key into profile_registry.SIGMA_FAMILIES
    amplitude: float = Field(0.05, ge=0, le=1)
    seed: int = Field(0, ge=0, lt=2**64)
    T: float = Field(1.0, gt=0, le=8)
    T_neg: float = Field(0.5, ge=0, le=4)
    dt_path: float = Field(2.0**-10, gt=0, le=0.1)
    alpha: float = Field(0.45, gt=1 / 3, lt=0.5)
    beta: float = Field(0.35, gt=1 / 3, lt=0.5)
    levels: int = Field(6, ge=1, le=12)

    @model_validator(mode="after")
    def _beta_below_alpha(self):
        if self.beta >= self.alpha:
            raise ValueError("beta must be smaller than alpha")
        return self


class GridSettings(_Section):
    N: int = Field(32, ge=8, le=128)
    dt: float = Field(1 / 16, gt=0, le=0.5)
    composition_tolerance: float = Field(1e-6, gt=0)
    residual_tolerance: float = Field(1e-6, gt=0)
    jacobian_tolerance: float = Field(1e-4, gt=0)

    @field_validator("N")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("N must be a power of two")
        return value


class ScheduleSettings(_Section):
    mode: Literal["surrogate", "paper"] = "surrogate"
    a: float = Field(2.0, ge=1.5)
    b: float = Field(2.0, gt=1)
    m: float = Field(38.0, ge=4)
    eps: float = Field(15.0, gt=0)
    lam: Optional[int] = Field(None, ge=1)
    mu: Optional[int] = Field(None, ge=1)
    ell_inv: Optional[int] = Field(None, ge=1)
    varsigma0: float = Field(2.0**-3, gt=0, le=1)
    eta: Optional[float] = Field(None, gt=0, lt=1)  # fixed η instead of the energy caps
    K0: float = Field(10.0, ge=0)
    L: int = Field(1, ge=1)
    min_norm_sq: int = Field(101, ge=2)

    @model_validator(mode="after")
    def _integer_ratio(self):
        if self.lam is not None and self.mu is not None and self.lam % self.mu:
            raise ValueError(f"lambda/mu must be an integer (lambda={self.lam}, mu={self.mu})")
        if self.ell_inv is not None and self.ell_inv & (self.ell_inv - 1):
            raise ValueError("ell_inv must be a power of two")
        return self


class EnergySettings(_Section):
    profile: str = "constant"  # key into profile_registry.ENERGY_PROFILES
    c0: float = Field(1.0, gt=0)
    c1: float = Field(0.0, ge=0)
    split_time: float = Field(0.5, ge=0)
    split_factor: float = Field(1.5, gt=0)
    # declared e̲ ≤ e(t) ≤ ē; when set, η no longer depends on the profile shape
    e_min: Optional[float] = Field(None, gt=0)
    e_max: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _positive_profile(self):
        if self.c1 >= self.c0:
            raise ValueError("c1 must be smaller than c0 so that inf e > 0")
        if self.e_min is not None and self.e_max is not None and self.e_min > self.e_max:
            raise ValueError("e_min must not exceed e_max")
        return self


class RunSettings(_Section):
    n_max: int = Field(3, ge=1, le=8)
    snapshot_every: int = Field(0, ge=0)
    n_seeds: int = Field(10, ge=1, le=1000)


class RunConfig(_Section):
    noise: NoiseSettings = NoiseSettings()
    grid: GridSettings = GridSettings()
    schedule: ScheduleSettings = ScheduleSettings()
    energy: EnergySettings = EnergySettings()
    run: RunSettings = RunSettings()

    def with_seed(self, seed: int) -> "RunConfig":
        return self.model_copy(update={"noise": self.noise.model_copy(update={"seed": seed})})


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

class PartNorms(BaseModel):
    sup_norm: float = Field(..., ge=0)
    c1_norm: float = Field(..., ge=0)
    besov_m1: float = Field(..., ge=0)


class PartSample(PartNorms):
    t: float
    part_name: str


class EnergySample(BaseModel):
    t: float
    measured_energy: float
    target_e_times_1_minus_delta: float
    bound: float


class IterationRecord(BaseModel):
    level: int = Field(..., ge=0)
    stopping_time: float
    reynolds_sup: float = Field(..., ge=0)
    pressure_sup: float = Field(..., ge=0)
    divergence_besov: float = Field(..., ge=0)
    velocity_c1: float = Field(..., ge=0)
    pressure_c1: float = Field(0.0, ge=0)
    reynolds_c1: float = Field(0.0, ge=0)
    velocity_increment: Optional[float] = None
    pressure_increment: Optional[float] = None
    increment_c1: Optional[float] = None
    increment_holder: Optional[float] = None
    interpolation_bound: Optional[float] = None
    energy_error: float = Field(..., ge=0)
    energy: List[EnergySample] = []
    parts: Dict[str, PartNorms] = {}  # max over the sampled frames
    part_samples: List[PartSample] = []


class EstimateVerdict(BaseModel):
    name: str
    level: int
    inequality: str
    lhs: float
    rhs: float
    ratio: Optional[float] = None
    verdict: Literal["pass", "fail", "n/a"]


class RunManifest(BaseModel):
    version: int = 1
    status: Literal["running", "complete", "partial"] = "running"
    error: Optional[str] = None
    seed: int
    mode: Literal["surrogate", "paper"]
    config: RunConfig
    schedule: Dict[str, Any] = {}
    constants: Dict[str, float] = {}
    iterations: List[IterationRecord] = []
    verdicts: List[EstimateVerdict] = []

    def append(self, record: IterationRecord) -> None:
        self.iterations.append(record)


# ---------------------------------------------------------------------------
# Verification reports
# ---------------------------------------------------------------------------

class InvariantCheck(BaseModel):
    suite: str
    name: str
    measured: float
    bound: Optional[float] = None  # None marks a measured constant with no fixed bound
    passed: bool
    detail: str = ""


class VerificationReport(BaseModel):
    suites: List[str]
    checks: List[InvariantCheck] = []

    @property
    def failed(self) -> List[InvariantCheck]:
        return [check for check in self.checks if not check.passed]
