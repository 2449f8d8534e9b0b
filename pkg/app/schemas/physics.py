# app/schemas/physics.py
import math
import logging
from enum import Enum
from typing import Any, Callable, Dict, List, Literal, Optional

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationInfo,
    computed_field,
    field_validator,
    model_validator,
)
from pydantic_core import PydanticCustomError

from app.core.errors import ParameterError

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
PUMP_RATIO_MIN = 10.0
PUMP_RATIO_WARN = 100.0
ZERO_POINT_VARIANCE = 0.5


class Phase(str, Enum):
    DISORDERED = "disordered"
    U1 = "u1"
    U1XZ2 = "u1xz2"


class Frame(str, Enum):
    STATIC = "static"
    CO_ROTATING = "co-rotating"


class Scheme(str, Enum):
    EULER_MARUYAMA = "euler-maruyama"
    STOCHASTIC_HEUN = "stochastic-heun"


# --- Parameter Schemas ---

class SystemParams(BaseModel):
    """
    Physical inputs of the driven two-mode system. Rates share the unit of
    gamma0, tau_r is a time in the same unit system, occupancies are bare
    numbers. kappa and F_cr are derived on construction.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma0: float = 1.0
    gammaP: float = 100.0
    tau_r: float = 0.0
    g: float = 1.0
    mu: float = 0.0
    n_th_i: float = 0.0
    n_th_s: float = 0.0
    n_th_P: float = 0.0

    @field_validator("gamma0", "gammaP", "g")
    @classmethod
    def _rate_is_positive(cls, v: float, info: ValidationInfo) -> float:
        if not math.isfinite(v) or v <= 0:
            raise PydanticCustomError(
                "NonPositiveRate", "{field} must be finite and > 0, got {value}",
                {"field": info.field_name, "value": v},
            )
        return v

    @field_validator("tau_r")
    @classmethod
    def _memory_time_is_nonnegative(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise PydanticCustomError(
                "NonPositiveRate", "tau_r must be finite and >= 0, got {value}", {"value": v}
            )
        return v

    @field_validator("mu")
    @classmethod
    def _drive_is_nonnegative(cls, v: float) -> float:
        if not math.isfinite(v) or v < 0:
            raise PydanticCustomError(
                "NegativeDrive", "mu must be finite and >= 0, got {value}", {"value": v}
            )
        return v

    @field_validator("n_th_i", "n_th_s", "n_th_P")
    @classmethod
    def _occupancy_is_nonnegative(cls, v: float, info: ValidationInfo) -> float:
        if not math.isfinite(v) or v < 0:
            raise PydanticCustomError(
                "NegativeOccupancy", "{field} must be finite and >= 0, got {value}",
                {"field": info.field_name, "value": v},
            )
        return v

    @model_validator(mode="after")
    def _pump_is_fast(self) -> "SystemParams":
        ratio = self.gammaP / self.gamma0
        if ratio < PUMP_RATIO_MIN:
            raise PydanticCustomError(
                "PumpNotFast",
                "gammaP/gamma0 = {ratio} is below the adiabatic-pump minimum of {minimum}",
                {"ratio": ratio, "minimum": PUMP_RATIO_MIN},
            )
        if ratio < PUMP_RATIO_WARN:
            logger.warning(
                f"gammaP/gamma0={ratio:g} is below {PUMP_RATIO_WARN:g}; closed-form variances "
                f"assume an adiabatically slaved pump."
            )
        return self

    @computed_field
    @property
    def kappa(self) -> float:
        if self.tau_r == 0:
            return math.inf
        return 1.0 / (self.gamma0 * self.tau_r)

    @computed_field
    @property
    def F_cr(self) -> float:
        return self.gammaP * self.gamma0 / (4.0 * self.g)

    # --- Normalized quantities used by the services ---

    @property
    def is_markovian(self) -> bool:
        return self.tau_r == 0

    @property
    def pump_rate(self) -> float:
        """gammaP in units of gamma0."""
        return self.gammaP / self.gamma0

    @property
    def n_th(self) -> float:
        """Occupancy seen by the cross-quadratures (mean of idler and signal)."""
        return 0.5 * (self.n_th_i + self.n_th_s)

    @property
    def thermal_variance(self) -> float:
        return self.n_th + 0.5

    @property
    def noise_scale(self) -> float:
        """Squared ratio between dimensionless and physical amplitudes, 4g^2/(gamma0*gammaP)."""
        return 4.0 * self.g ** 2 / (self.gamma0 * self.gammaP)

    @classmethod
    def from_kappa(cls, kappa: float, **fields: Any) -> "SystemParams":
        """Builds params from the normalized reservoir decay rate; kappa = inf is Markovian."""
        if not kappa > 0:
            raise ParameterError([{
                "code": "NonPositiveRate", "field": "kappa",
                "message": f"kappa must be > 0, got {kappa}",
            }])
        if "tau_r" in fields:
            raise ParameterError([{
                "code": "ConflictingMemory", "field": "kappa",
                "message": "kappa and tau_r are mutually exclusive",
            }])
        gamma0 = fields.get("gamma0", 1.0)
        tau_r = 0.0 if math.isinf(kappa) else 1.0 / (gamma0 * kappa)
        return cls(tau_r=tau_r, **fields)

    def with_point(self, mu: float, kappa: float) -> "SystemParams":
        """Copy of these params at another (mu, kappa) grid point."""
        fields = self.model_dump(exclude={"kappa", "F_cr", "tau_r", "mu"})
        return SystemParams.from_kappa(kappa, mu=mu, **fields)


class MemoryKernel(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma0: float = Field(1.0, gt=0)
    tau_r: float = Field(0.0, ge=0)

    @classmethod
    def from_params(cls, params: SystemParams) -> "MemoryKernel":
        return cls(gamma0=params.gamma0, tau_r=params.tau_r)


class DeltaKernel(BaseModel):
    """Stand-in for gamma0*delta(t): the Markovian kernel has no finite pointwise value."""
    model_config = ConfigDict(frozen=True)

    weight: float
    is_delta: Literal[True] = True


# --- Mean-field Schemas ---

class SteadyState(BaseModel):
    model_config = ConfigDict(frozen=True)

    phase: Phase
    amp_signal: float = Field(..., ge=0)
    amp_idler: float = Field(..., ge=0)
    pump_amp: complex
    delta: float = Field(0.0, ge=0)
    z2_branch: Literal[1, -1] = 1
    phi: float = 0.0
    mu: float
    kappa: float
    mu_cr: float

    @property
    def signed_delta(self) -> float:
        """Frequency of the idler's co-rotating frame; the signal frame turns the other way."""
        return self.z2_branch * self.delta

    @property
    def idler_amplitude(self) -> complex:
        return 1j * self.amp_idler * complex(math.cos(self.phi / 2), math.sin(self.phi / 2))

    @property
    def signal_amplitude(self) -> complex:
        return 1j * self.amp_signal * complex(math.cos(self.phi / 2), -math.sin(self.phi / 2))


class PhaseDiagramPoint(BaseModel):
    mu: float
    kappa: float
    phase: Phase
    max_re_lambda: float
    error: Optional[str] = None


# --- Linear-response Schemas ---

class EmbeddedMatrix(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray
    labels: List[str]
    frame: Frame
    frame_delta: float = 0.0
    phase: Phase

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_memory(self) -> int:
        return self.dim - 6


class EigenSpectrum(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    eigenvalues: np.ndarray
    max_re: float
    stable: bool
    eigenvectors: Optional[np.ndarray] = Field(None, exclude=True)


class EigenflowPoint(BaseModel):
    mu: float
    phase: Phase
    eigenvalues: List[complex] = []
    error: Optional[str] = None


class EigenflowResult(BaseModel):
    kappa: float
    mu_cr: float
    mu_ep: Optional[float] = None
    points: List[EigenflowPoint]


# --- Spectra Schemas ---

class SpectralData(BaseModel):
    """
    Cross-quadrature PSD on a frequency grid. density evaluates S(omega) anywhere
    (Goldstone-regularized in ordered phases), raw_density is the unregularized
    matrix used for divergence detection.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    omega: np.ndarray
    matrices: np.ndarray
    labels: List[str]
    phase: Phase
    frame: Frame
    thermal_variance: float
    pump_noise: bool
    pole_scales: List[float]
    goldstone_labels: List[str] = []
    density: Callable[[float], np.ndarray] = Field(..., exclude=True)
    raw_density: Callable[[float], np.ndarray] = Field(..., exclude=True)
    covariance: Optional[np.ndarray] = None


class QuadratureVariance(BaseModel):
    normalized: Optional[float] = None
    absolute: Optional[float] = None
    divergent: bool = False
    std_error: Optional[float] = None


class VarianceReport(BaseModel):
    phase: Phase
    method: str
    thermal_variance: float
    quadratures: Dict[str, QuadratureVariance]
    squeezed_label: str
    amplified_label: Optional[str] = None
    squeezed: float
    amplified: Optional[float] = None
    mixing_angle: Optional[float] = None
    metadata: Dict[str, Any] = {}

    @property
    def sigma_sq_abs(self) -> float:
        return self.squeezed * self.thermal_variance

    def normalized(self, label: str) -> Optional[float]:
        return self.quadratures[label].normalized


class NegativityResult(BaseModel):
    e_n: float = Field(..., ge=0)
    sigma_sq_abs: float
    sigma_zpm: float = ZERO_POINT_VARIANCE


class NegativityPoint(BaseModel):
    mu: float
    kappa: float
    n_th: float
    e_n: float
    sigma_sq_abs: float
    comparator: bool = False
    error: Optional[str] = None


# --- Stochastic Simulation Schemas ---

class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    dt: float = Field(0.005, gt=0)
    t_burn: float = Field(100.0, ge=0)
    t_sample: float = Field(200.0, gt=0)
    n_traj: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    scheme: Scheme = Scheme.STOCHASTIC_HEUN
    record_every: int = Field(10, ge=1)
    noise: bool = True
    pump_noise: Optional[bool] = None
    smoothing_window: float = Field(5.0, gt=0)
    block_steps: int = Field(2000, ge=1)


class Trajectory(BaseModel):
    """One recorded trajectory. Memory and noise states are None in the Markovian case."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    t: np.ndarray
    A_i: np.ndarray
    A_s: np.ndarray
    A_P: np.ndarray
    c_i: Optional[np.ndarray] = None
    c_s: Optional[np.ndarray] = None
    f_i: Optional[np.ndarray] = None
    f_s: Optional[np.ndarray] = None

    @property
    def record_dt(self) -> float:
        return float(self.t[1] - self.t[0])


class OrderParameters(BaseModel):
    amp_mean: float
    amp_se: float
    delta_est: float
    delta_se: float
    delta_abs_est: float
    delta_per_trajectory: List[float]
    var_phi_dot: float
    var_phi_dot_se: float
    smoothing_window: float
    n_samples: int
