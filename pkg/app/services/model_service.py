# app/services/model_service.py
import math
import logging
from typing import Any, Dict, Mapping, Union

import numpy as np
from pydantic import ValidationError

from app.core.errors import ParameterError
from app.schemas.physics import DeltaKernel, MemoryKernel, SystemParams

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
PARAM_FILE_KEYS = ("gamma0", "gammaP", "tau_r", "kappa", "g", "mu", "n_th_i", "n_th_s", "n_th_P")


# --- Memory kernel ---

def kernel_time(kernel: MemoryKernel, t: Union[float, np.ndarray]) -> Union[float, np.ndarray, DeltaKernel]:
    """
    Time-domain dissipation kernel gamma0*exp(-t/tau_r)/tau_r, zero for t < 0.
    The Markovian kernel returns a DeltaKernel sentinel instead of a number.
    """
    if kernel.tau_r == 0:
        if np.ndim(t) == 0 and t < 0:
            return 0.0
        return DeltaKernel(weight=kernel.gamma0)

    rate = kernel.gamma0 / kernel.tau_r
    if np.ndim(t) == 0:
        return 0.0 if t < 0 else rate * math.exp(-t / kernel.tau_r)
    t = np.asarray(t, dtype=float)
    return np.where(t < 0, 0.0, rate * np.exp(-np.clip(t, 0.0, None) / kernel.tau_r))


def kernel_freq(kernel: MemoryKernel, omega: Union[float, np.ndarray]) -> Union[complex, np.ndarray]:
    """Fourier transform gamma0/(1 - i*omega*tau_r), built from its real and imaginary parts."""
    x = np.asarray(omega, dtype=float) * kernel.tau_r
    denom = 1.0 + x * x
    real = kernel.gamma0 / denom
    imag = kernel.gamma0 * x / denom
    if np.ndim(omega) == 0:
        return complex(float(real), float(imag))
    return real + 1j * imag


def kernel_freq_real(kernel: MemoryKernel, omega: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """gamma0/(1 + (omega*tau_r)^2), the weight of the colored-noise spectrum."""
    x = np.asarray(omega, dtype=float) * kernel.tau_r
    value = kernel.gamma0 / (1.0 + x * x)
    return float(value) if np.ndim(omega) == 0 else value


# --- Validation ---

def violations_from(error: ValidationError) -> list:
    violations = []
    for err in error.errors():
        field = ".".join(str(part) for part in err["loc"]) or "params"
        code = err["type"]
        if code == "extra_forbidden":
            code = "UnknownKey"
        violations.append({"code": code, "field": field, "message": err["msg"]})
    return violations


def validate(raw: Mapping[str, Any]) -> SystemParams:
    """
    Builds SystemParams from raw field values, accepting kappa in place of tau_r.
    Every violated constraint is collected into one ParameterError.
    """
    fields = dict(raw)
    kappa = fields.pop("kappa", None)
    try:
        if kappa is not None:
            return SystemParams.from_kappa(float(kappa), **fields)
        return SystemParams(**fields)
    except ValidationError as e:
        violations = violations_from(e)
        logger.error(f"Parameter validation failed: {violations}")
        raise ParameterError(violations) from e


# --- Parameter file ---

def parse_param_file(text: str) -> Dict[str, float]:
    """Parses the flat `key = value` format. Blank lines and '#' comments are skipped."""
    values: Dict[str, float] = {}
    violations = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            violations.append({"code": "MalformedLine", "field": f"line {lineno}",
                               "message": f"expected 'key = value', got {stripped!r}"})
            continue
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in PARAM_FILE_KEYS:
            violations.append({"code": "UnknownKey", "field": key,
                               "message": f"unknown parameter on line {lineno}"})
            continue
        if key in values:
            violations.append({"code": "DuplicateKey", "field": key,
                               "message": f"repeated on line {lineno}"})
            continue
        try:
            values[key] = float(value)
        except ValueError:
            violations.append({"code": "NotANumber", "field": key,
                               "message": f"{value!r} is not a number"})
    if "kappa" in values and "tau_r" in values:
        violations.append({"code": "ConflictingMemory", "field": "kappa",
                           "message": "kappa and tau_r are mutually exclusive"})
    if violations:
        raise ParameterError(violations)
    return values


def load_param_file(path: str) -> Dict[str, float]:
    with open(path, "r") as f:
        return parse_param_file(f.read())


def bose_occupancy(hbar_omega_over_kT: float) -> float:
    """Mean thermal occupancy 1/(exp(hbar*omega/k_B*T) - 1) of a mode."""
    if hbar_omega_over_kT <= 0:
        raise ValueError("hbar_omega_over_kT must be > 0")
    return 1.0 / math.expm1(hbar_omega_over_kT)


def grid_error(message: str, field: str = "grid") -> ParameterError:
    return ParameterError([{"code": "BadGrid", "field": field, "message": message}])
