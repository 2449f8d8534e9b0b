# app/schemas/requests.py
import math
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.physics import Phase


def finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None or not math.isfinite(value):
        return None
    return value


# --- Parameter payloads ---
class ParamsPayload(BaseModel):
    """Physical parameters as sent over HTTP. Unset fields take model defaults; kappa may replace tau_r."""
    model_config = ConfigDict(extra="forbid")

    gamma0: Optional[float] = None
    gammaP: Optional[float] = None
    tau_r: Optional[float] = None
    kappa: Optional[float] = None
    g: Optional[float] = None
    mu: Optional[float] = None
    n_th_i: Optional[float] = None
    n_th_s: Optional[float] = None
    n_th_P: Optional[float] = None

    def raw(self) -> Dict[str, Any]:
        return self.model_dump(exclude_none=True)


class PointRequest(BaseModel):
    params: ParamsPayload = Field(default_factory=ParamsPayload)
    phase: Optional[Phase] = None


class PhaseDiagramRequest(BaseModel):
    mu_grid: List[float] = Field(..., min_length=1)
    kappa_grid: List[float] = Field(..., min_length=1)
    params: ParamsPayload = Field(default_factory=ParamsPayload)


class EigenflowRequest(BaseModel):
    kappa: float = Field(..., gt=0)
    mu_grid: List[float] = Field(..., min_length=1)
    phases: Optional[List[Phase]] = None
    params: ParamsPayload = Field(default_factory=ParamsPayload)


class VarianceRequest(BaseModel):
    params: ParamsPayload = Field(default_factory=ParamsPayload)
    method: Literal["auto", "closed-form", "lyapunov"] = "auto"


class NegativityRequest(BaseModel):
    mu_grid: List[float] = Field(..., min_length=1)
    kappa_grid: List[float] = Field(default_factory=lambda: [0.2], min_length=1)
    n_th: List[float] = Field(default_factory=lambda: [0.0], min_length=1)
    n_th_P: Optional[float] = None
    markovian_comparator: bool = False
    params: ParamsPayload = Field(default_factory=ParamsPayload)


# --- Responses ---
class ComplexValue(BaseModel):
    re: float
    im: float

    @classmethod
    def of(cls, z: complex) -> "ComplexValue":
        return cls(re=z.real, im=z.imag)


class SteadyStateResponse(BaseModel):
    phase: Phase
    amp_signal: float
    amp_idler: float
    pump_amp: ComplexValue
    delta: float
    signed_delta: float
    mu: float
    kappa: Optional[float]
    mu_cr: float


class PhaseDiagramRow(BaseModel):
    mu: float
    kappa: float
    phase: Phase
    max_re_lambda: Optional[float] = None
    error: Optional[str] = None


class EigenspectrumResponse(BaseModel):
    phase: Phase
    frame: str
    labels: List[str]
    eigenvalues: List[ComplexValue]
    max_re: float
    stable: bool


class EigenflowRow(BaseModel):
    mu: float
    phase: Phase
    eigenvalues: List[ComplexValue] = []
    error: Optional[str] = None


class EigenflowResponse(BaseModel):
    kappa: float
    mu_cr: float
    mu_ep: Optional[float] = None
    points: List[EigenflowRow]


class NegativityRow(BaseModel):
    mu: float
    kappa: Optional[float]
    n_th: float
    e_n: Optional[float] = None
    sigma_sq_abs: Optional[float] = None
    comparator: bool = False
    error: Optional[str] = None
