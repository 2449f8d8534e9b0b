# app/services/spectra_service.py
import math
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import quad_vec
from scipy.optimize import minimize_scalar

from app.core.errors import OutOfRegime, ParameterError, SingularAtFrequency, TailNotConverged, ToolkitError
from app.core.settings import get_thread_count
from app.schemas.physics import (
    ZERO_POINT_VARIANCE,
    Frame,
    MemoryKernel,
    NegativityPoint,
    NegativityResult,
    Phase,
    QuadratureVariance,
    SpectralData,
    SteadyState,
    SystemParams,
    VarianceReport,
)
from app.services import linres_service, meanfield_service, model_service

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
REPORTED = ("x+", "x-", "y+", "y-")
SINGULAR_COND = 1e12
TAIL_TOLERANCE = 1e-3
QUAD_EPSREL = 1e-10
DIVERGENCE_OMEGAS = (1e-5, 1e-6)
DIVERGENCE_RATIO = 50.0
ANGLE_SCAN_POINTS = 64
MARGINAL_RATE = 1e-9


# --- Noise ---

def _mode_block(weight: Callable[[float], float], omega: float, delta: float) -> np.ndarray:
    """(x, y) diffusion of one colored-noise mode seen from a frame rotating at delta."""
    up, down = weight(omega + delta), weight(omega - delta)
    return np.array([
        [0.5 * (up + down), 0.5j * (up - down)],
        [-0.5j * (up - down), 0.5 * (up + down)],
    ])


def diffusion_matrix(params: SystemParams, ss: SteadyState, omega: float, pump_noise: bool) -> np.ndarray:
    """
    D(omega) on (x+, x-, xP, y+, y-, yP). Signal and idler carry the colored
    weight (n+1/2)*Re gamma~(omega); the pump is white with gammaP^2*(n_P+1/2).
    In the co-rotating frame the shifted spectra add X-Y cross terms.
    """
    kernel = MemoryKernel(gamma0=1.0, tau_r=params.tau_r * params.gamma0)
    delta_i = ss.signed_delta
    D = np.zeros((6, 6), dtype=complex)
    # quadrature order before rotation: (x_i, x_s, x_P, y_i, y_s, y_P)
    for slot, (occupancy, delta) in enumerate(((params.n_th_i, delta_i), (params.n_th_s, -delta_i))):
        weight = lambda w, n=occupancy: (n + 0.5) * model_service.kernel_freq_real(kernel, w)
        block = _mode_block(weight, omega, delta)
        idx = [slot, slot + 3]
        D[np.ix_(idx, idx)] = block
    if pump_noise:
        D[2, 2] = D[5, 5] = params.pump_rate ** 2 * (params.n_th_P + 0.5)
    T = linres_service._cross_quadrature_rotation(3)
    return T @ D @ T.T


def _default_pump_noise(ss: SteadyState) -> bool:
    return ss.phase != Phase.DISORDERED


# --- Susceptibility & PSD ---

def _invert(sus: np.ndarray, omega: float) -> np.ndarray:
    try:
        inv = np.linalg.inv(sus)
    except np.linalg.LinAlgError as e:
        raise SingularAtFrequency(f"Susceptibility is singular at omega={omega}", omega=omega) from e
    cond = np.linalg.norm(sus, 1) * np.linalg.norm(inv, 1)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularAtFrequency(
            f"Susceptibility is numerically singular at omega={omega} (cond~{cond:.2e})", omega=omega
        )
    return inv


def susceptibility_at(params: SystemParams, ss: SteadyState, omega: float) -> np.ndarray:
    m = linres_service.build_embedded_matrix(params, ss)
    sus = linres_service.susceptibility_from_generator(m.matrix, omega)
    _invert(sus, omega)
    return sus


def _density(matrix: np.ndarray, params: SystemParams, ss: SteadyState, pump_noise: bool) -> Callable[[float], np.ndarray]:
    def density(omega: float) -> np.ndarray:
        H = _invert(linres_service.susceptibility_from_generator(matrix, omega), omega)
        return H @ diffusion_matrix(params, ss, omega, pump_noise) @ H.conj().T / (2.0 * math.pi)
    return density


def psd(
    params: SystemParams,
    ss: SteadyState,
    omega_grid: Sequence[float],
    pump_noise: Optional[bool] = None,
) -> SpectralData:
    if pump_noise is None:
        pump_noise = _default_pump_noise(ss)
    m = linres_service.build_embedded_matrix(params, ss)
    mode = linres_service.goldstone_mode(m) if ss.phase != Phase.DISORDERED else None
    regularized = mode.regularized if mode is not None else m.matrix

    raw_density = _density(m.matrix, params, ss, pump_noise)
    omega = np.asarray(omega_grid, dtype=float)
    matrices = np.array([raw_density(w) for w in omega]) if omega.size else np.zeros((0, 6, 6), dtype=complex)

    scales = np.abs(scipy.linalg.eigvals(regularized))
    scales = np.concatenate([scales, [abs(ss.delta)]])
    scales = sorted({float(s) for s in scales if s > 1e-12})
    return SpectralData(
        omega=omega, matrices=matrices, labels=list(linres_service.QUADRATURE_LABELS),
        phase=ss.phase, frame=m.frame, thermal_variance=params.thermal_variance,
        pump_noise=pump_noise, pole_scales=scales,
        goldstone_labels=linres_service.divergent_quadratures(m, mode),
        density=_density(regularized, params, ss, pump_noise), raw_density=raw_density,
    )


# --- Integration ---

def _divergent_labels(sd: SpectralData) -> List[str]:
    hi, lo = DIVERGENCE_OMEGAS
    try:
        s_hi = np.real(np.diag(sd.raw_density(hi)))
        s_lo = np.real(np.diag(sd.raw_density(lo)))
    except SingularAtFrequency:
        return list(sd.goldstone_labels)
    divergent = []
    for i, label in enumerate(sd.labels):
        if s_hi[i] > 0 and s_lo[i] / s_hi[i] > DIVERGENCE_RATIO:
            divergent.append(label)
    return divergent


def _tail(f_half: np.ndarray, f_end: np.ndarray, cutoff: float) -> np.ndarray:
    """Power-law tail integral per entry, exponent fitted from f(cutoff/2) and f(cutoff)."""
    tail = np.zeros_like(f_end)
    same_sign = (f_half * f_end > 0) & (np.abs(f_end) < np.abs(f_half))
    p = np.log2(np.where(same_sign, f_half / np.where(f_end == 0, 1.0, f_end), 2.0))
    ok = same_sign & (p > 1.0 + 1e-6)
    tail[ok] = f_end[ok] * cutoff / (p[ok] - 1.0)
    return tail


def integrated_covariance(sd: SpectralData) -> np.ndarray:
    """
    2 * integral over [0, inf) of Re S(omega): a linear panel near zero, a
    log-frequency panel with breakpoints at the pole scales, and a power-law tail.
    """
    scales = sd.pole_scales or [1.0]
    omega_lo = 1e-3 * min(scales)
    cutoff = 1e4 * max(scales)
    f = lambda w: np.real(sd.density(w)).ravel()

    low, _ = quad_vec(f, 0.0, omega_lo, epsrel=QUAD_EPSREL, norm="max")
    u_lo, u_hi = math.log(omega_lo), math.log(cutoff)
    points = [math.log(s) for s in scales if omega_lo < s < cutoff]
    main, _ = quad_vec(
        lambda u: f(math.exp(u)) * math.exp(u), u_lo, u_hi,
        epsrel=QUAD_EPSREL, norm="max", points=points or None, limit=20000,
    )
    tail = _tail(f(cutoff / 2.0), f(cutoff), cutoff)
    total = low + main + tail

    n = len(sd.labels)
    diag = np.arange(n) * (n + 1)
    big = np.abs(total[diag]) > 0
    if np.any(np.abs(tail[diag][big]) > TAIL_TOLERANCE * np.abs(total[diag][big])):
        raise TailNotConverged(
            f"Spectral tail beyond omega={cutoff:.3g} exceeds {TAIL_TOLERANCE:.0e} of the integral"
        )
    return 2.0 * total.reshape(n, n)


def build_variance_report(
    phase: Phase,
    method: str,
    thermal_variance: float,
    absolute: Dict[str, Optional[float]],
    std_errors: Optional[Dict[str, float]] = None,
    metadata: Optional[dict] = None,
) -> VarianceReport:
    quadratures = {}
    for label in REPORTED:
        value = absolute.get(label)
        divergent = value is None or not math.isfinite(value)
        quadratures[label] = QuadratureVariance(
            normalized=None if divergent else value / thermal_variance,
            absolute=None if divergent else value,
            divergent=divergent,
            std_error=(std_errors or {}).get(label),
        )
    finite = {k: q.normalized for k, q in quadratures.items() if not q.divergent}
    squeezed_label = min(finite, key=finite.get)
    amplified_label = max(finite, key=finite.get)
    return VarianceReport(
        phase=phase, method=method, thermal_variance=thermal_variance, quadratures=quadratures,
        squeezed_label=squeezed_label, squeezed=finite[squeezed_label],
        amplified_label=amplified_label, amplified=finite[amplified_label],
        metadata=metadata or {},
    )


def integrate_variances(sd: SpectralData) -> VarianceReport:
    divergent = set(_divergent_labels(sd))
    cov = integrated_covariance(sd)
    sd.covariance = cov
    absolute = {}
    for label in REPORTED:
        i = sd.labels.index(label)
        absolute[label] = None if label in divergent else float(cov[i, i])
    return build_variance_report(
        sd.phase, "spectral", sd.thermal_variance, absolute,
        metadata={"frame": sd.frame.value, "pump_noise": sd.pump_noise},
    )


def stationary_covariance(params: SystemParams, ss: SteadyState, pump_noise: Optional[bool] = None) -> np.ndarray:
    """
    Exact stationary covariance of (x+, x-, xP, y+, y-, yP) from the Lyapunov
    equation of the embedded system, colored noise carried as extra OU states.
    Goldstone-dominated rows come back as NaN.
    """
    if pump_noise is None:
        pump_noise = _default_pump_noise(ss)
    m = linres_service.build_embedded_matrix(params, ss)
    mode = linres_service.goldstone_mode(m) if ss.phase != Phase.DISORDERED else None
    G = mode.regularized if mode is not None else m.matrix
    dim = G.shape[0]
    T = linres_service._cross_quadrature_rotation(3)

    white = np.zeros((6, 6))
    if pump_noise:
        white[2, 2] = white[5, 5] = params.pump_rate ** 2 * (params.n_th_P + 0.5)

    if params.is_markovian:
        white[0, 0] = white[3, 3] = params.n_th_i + 0.5
        white[1, 1] = white[4, 4] = params.n_th_s + 0.5
        A = G
        Q = T @ white @ T.T
    else:
        kappa = params.kappa
        delta_i = ss.signed_delta
        # noise states (x_i, x_s, y_i, y_s) in the unrotated order, then rotated like the quadratures
        K = np.zeros((6, 6))
        Qn = np.zeros((6, 6))
        for slot, (occupancy, delta) in enumerate(((params.n_th_i, delta_i), (params.n_th_s, -delta_i))):
            ix, iy = slot, slot + 3
            K[ix, ix] = K[iy, iy] = -kappa
            K[ix, iy] = -delta
            K[iy, ix] = delta
            Qn[ix, ix] = Qn[iy, iy] = (occupancy + 0.5) * kappa ** 2
        K, Qn = T @ K @ T.T, T @ Qn @ T.T
        keep = [0, 1, 3, 4]
        K, Qn = K[np.ix_(keep, keep)], Qn[np.ix_(keep, keep)]
        B = np.zeros((dim, 4))
        for col, row in enumerate(keep):
            B[row, col] = 1.0
        A = np.block([[G, B], [np.zeros((4, dim)), K]])
        Q = np.zeros((dim + 4, dim + 4))
        Q[:6, :6] = T @ white @ T.T
        Q[dim:, dim:] = Qn

    growth = float(np.linalg.eigvals(A).real.max())
    if growth >= -MARGINAL_RATE:
        raise SingularAtFrequency(
            f"Drift has a marginal mode besides the symmetry zero mode (max Re = {growth:.3e})",
            omega=0.0, point={"mu": params.mu, "kappa": params.kappa},
        )
    sigma = scipy.linalg.solve_continuous_lyapunov(A, -Q)[:6, :6]
    for label in linres_service.divergent_quadratures(m, mode):
        i = m.labels.index(label)
        sigma[i, :] = np.nan
        sigma[:, i] = np.nan
    return sigma


def covariance_report(params: SystemParams, ss: SteadyState, pump_noise: Optional[bool] = None) -> VarianceReport:
    """VarianceReport built from stationary_covariance."""
    cov = stationary_covariance(params, ss, pump_noise)
    labels = linres_service.QUADRATURE_LABELS
    absolute = {label: float(cov[labels.index(label), labels.index(label)]) for label in REPORTED}
    absolute = {k: (None if math.isnan(v) else v) for k, v in absolute.items()}
    return build_variance_report(ss.phase, "lyapunov", params.thermal_variance, absolute)


# --- Closed forms ---

def _branch_variance(m: float, kappa: float) -> float:
    """Normalized variance of a single-quadrature branch with parametric gain m/2."""
    if math.isinf(kappa):
        return 1.0 / (1.0 - m)
    return 2.0 * kappa / ((1.0 - m) * (2.0 * kappa - m))


def variances_below_threshold(mu: float, kappa: float, n_th: float = 0.0, continuation: bool = False) -> VarianceReport:
    """
    Squeezed (x+, y-) and amplified (x-, y+) variances of the parametric
    amplifier. At mu == mu_cr the amplified pair is divergent; beyond it only
    `continuation` gives the squeezed value.
    """
    mu_cr = meanfield_service.critical_drive(kappa)
    if mu > mu_cr and not continuation:
        raise OutOfRegime(f"Below-threshold forms need mu <= {mu_cr:g}, got mu={mu}",
                          point={"mu": mu, "kappa": kappa})
    thermal = n_th + 0.5
    sq = _branch_variance(-mu, kappa) * thermal
    amp = None if mu >= mu_cr else _branch_variance(mu, kappa) * thermal
    absolute = {"x+": sq, "y-": sq, "x-": amp, "y+": amp}
    return build_variance_report(Phase.DISORDERED, "closed-form", thermal, absolute, metadata={"continuation": mu > mu_cr})


def variances_above_threshold_u1(mu: float, kappa: float, n_th: float = 0.0, n_th_P: Optional[float] = None) -> VarianceReport:
    """Adiabatic-pump variances of the U(1) phase; x- carries the Goldstone mode."""
    if kappa < meanfield_service.MEMORY_CROSSOVER or mu <= 1.0:
        raise OutOfRegime(f"U1 forms need kappa >= 0.5 and mu > 1, got mu={mu}, kappa={kappa}",
                          point={"mu": mu, "kappa": kappa})
    n_th_P = n_th if n_th_P is None else n_th_P
    thermal = n_th + 0.5
    ratio = (n_th_P + 0.5) / thermal

    if math.isinf(kappa):
        x_plus = ratio * (mu - 1.0) / mu + 1.0 / (2.0 * mu)
        y_plus = ratio + 1.0 / (2.0 * (mu - 1.0))
        y_minus = 0.5
    else:
        x_plus = (ratio * 2.0 * (mu - 1.0) * (mu + kappa) + kappa) / (mu * (2.0 * kappa + 2.0 * mu - 1.0))
        y_denom = 2.0 * kappa + 2.0 * mu - 3.0
        y_plus = ratio * 2.0 * (mu - 1.0 + kappa) / y_denom + kappa / ((mu - 1.0) * y_denom)
        y_minus = kappa / (1.0 + 2.0 * kappa)

    absolute = {
        "x+": x_plus * thermal, "x-": None,
        "y+": y_plus * thermal if y_plus > 0 and math.isfinite(y_plus) else None,
        "y-": y_minus * thermal,
    }
    return build_variance_report(Phase.U1, "closed-form", thermal, absolute, metadata={"n_th_P": n_th_P})


# --- Frequency-shifted phase ---

def squeezing_scan(cov: np.ndarray, labels: Sequence[str] = linres_service.QUADRATURE_LABELS):
    """
    Minimum variance of cos(theta)*y- + sin(theta)*x+ over theta in [0, pi):
    a coarse scan followed by bounded refinement. Returns (theta, variance).
    """
    ix, iy = labels.index("x+"), labels.index("y-")
    cxx, cyy, cxy = cov[ix, ix], cov[iy, iy], 0.5 * (cov[ix, iy] + cov[iy, ix])
    var = lambda th: math.cos(th) ** 2 * cyy + math.sin(th) ** 2 * cxx + 2.0 * math.sin(th) * math.cos(th) * cxy

    grid = np.linspace(0.0, math.pi, ANGLE_SCAN_POINTS, endpoint=False)
    values = [var(th) for th in grid]
    best = int(np.argmin(values))
    step = math.pi / ANGLE_SCAN_POINTS
    result = minimize_scalar(var, bounds=(grid[best] - step, grid[best] + step), method="bounded",
                             options={"xatol": 1e-10})
    theta = float(result.x % math.pi)
    value = float(result.fun)
    if values[best] < value:
        theta, value = float(grid[best]), float(values[best])
    return theta, value


def variances_u1xz2(params: SystemParams, ss: SteadyState) -> VarianceReport:
    if ss.phase != Phase.U1XZ2:
        raise OutOfRegime(f"Expected a {Phase.U1XZ2.value} steady state, got {ss.phase.value}",
                          point={"mu": params.mu, "kappa": params.kappa})
    sd = psd(params, ss, [])
    report = integrate_variances(sd)
    theta, value = squeezing_scan(sd.covariance)
    normalized = value / sd.thermal_variance
    metadata = dict(report.metadata)
    metadata["squeezed_quadrature"] = "cos(theta)*y- + sin(theta)*x+"
    if normalized < report.squeezed:
        return report.model_copy(update={
            "squeezed": normalized, "squeezed_label": "mixed", "mixing_angle": theta, "metadata": metadata,
        })
    return report.model_copy(update={"mixing_angle": theta, "metadata": metadata})


def variances(params: SystemParams, ss: Optional[SteadyState] = None) -> VarianceReport:
    """Numerical variances on the regime-appropriate path for any phase."""
    ss = ss or meanfield_service.steady_state(params)
    if ss.phase == Phase.U1XZ2:
        return variances_u1xz2(params, ss)
    return integrate_variances(psd(params, ss, []))


VARIANCE_METHODS = ("auto", "closed-form", "lyapunov")


def variances_by_method(params: SystemParams, method: str = "auto") -> VarianceReport:
    """auto integrates the spectral density; closed-form falls back to it where no closed form exists."""
    if method not in VARIANCE_METHODS:
        raise ValueError(f"method must be one of {VARIANCE_METHODS}, got {method!r}")
    if method == "lyapunov":
        return covariance_report(params, meanfield_service.steady_state(params))
    if method == "closed-form":
        phase = meanfield_service.classify_phase(params.mu, params.kappa)
        if phase == Phase.DISORDERED:
            return variances_below_threshold(params.mu, params.kappa, params.n_th)
        if phase == Phase.U1:
            return variances_above_threshold_u1(params.mu, params.kappa, params.n_th, params.n_th_P)
    return variances(params)


# --- Entanglement ---

def log_negativity(sigma_sq_abs: float, sigma_zpm: float = ZERO_POINT_VARIANCE) -> NegativityResult:
    violations = []
    if not (math.isfinite(sigma_sq_abs) and sigma_sq_abs >= 0):
        violations.append({"code": "OutOfRange", "field": "sigma_sq_abs",
                           "message": f"must be finite and >= 0, got {sigma_sq_abs}"})
    if not (math.isfinite(sigma_zpm) and sigma_zpm > 0):
        violations.append({"code": "OutOfRange", "field": "sigma_zpm",
                           "message": f"must be finite and > 0, got {sigma_zpm}"})
    if violations:
        raise ParameterError(violations)
    ratio = min(sigma_sq_abs / sigma_zpm, 1.0)
    e_n = 0.0 if ratio >= 1.0 else -0.5 * math.log2(ratio)
    return NegativityResult(e_n=e_n, sigma_sq_abs=sigma_sq_abs, sigma_zpm=sigma_zpm)


def _squeezed_variance(params: SystemParams) -> float:
    """Absolute squeezed variance at a point, closed form where one exists."""
    phase = meanfield_service.classify_phase(params.mu, params.kappa)
    if phase == Phase.DISORDERED:
        return variances_below_threshold(params.mu, params.kappa, params.n_th).sigma_sq_abs
    if phase == Phase.U1:
        return variances_above_threshold_u1(params.mu, params.kappa, params.n_th, params.n_th_P).sigma_sq_abs
    return variances_u1xz2(params, meanfield_service.steady_state(params)).sigma_sq_abs


def _negativity_point(base: SystemParams, mu: float, kappa: float, n_th: float,
                      n_th_P: Optional[float], comparator: bool) -> NegativityPoint:
    try:
        fields = base.model_dump(exclude={"kappa", "F_cr", "tau_r", "mu"})
        fields.update(n_th_i=n_th, n_th_s=n_th, n_th_P=n_th if n_th_P is None else n_th_P)
        params = SystemParams.from_kappa(kappa, mu=mu, **fields)
        result = log_negativity(_squeezed_variance(params))
        return NegativityPoint(mu=mu, kappa=kappa, n_th=n_th, e_n=result.e_n,
                               sigma_sq_abs=result.sigma_sq_abs, comparator=comparator)
    except ToolkitError as e:
        logger.warning(f"negativity point failed mu={mu} kappa={kappa} n_th={n_th} error={e.code}: {e.message}")
        return NegativityPoint(mu=mu, kappa=kappa, n_th=n_th, e_n=math.nan, sigma_sq_abs=math.nan,
                               comparator=comparator, error=e.code)


def negativity_map(
    mu_grid: Sequence[float],
    kappa_grid: Sequence[float],
    n_th: Sequence[float] = (0.0,),
    n_th_P: Optional[float] = None,
    markovian_comparator: bool = False,
    base: Optional[SystemParams] = None,
) -> List[NegativityPoint]:
    """
    E_N over (n_th, kappa, mu), n_th-major. The comparator rows repeat every
    (n_th, mu) at kappa = inf. n_th_P defaults to the signal/idler occupancy.
    """
    base = base or SystemParams()
    jobs = [(mu, kappa, n, False) for n in n_th for kappa in kappa_grid for mu in mu_grid]
    if markovian_comparator:
        jobs += [(mu, math.inf, n, True) for n in n_th for mu in mu_grid]

    start_time = time.time()
    with ThreadPoolExecutor(max_workers=get_thread_count()) as pool:
        rows = list(pool.map(lambda j: _negativity_point(base, j[0], j[1], j[2], n_th_P, j[3]), jobs))
    elapsed_ms = (time.time() - start_time) * 1000
    logger.info(f"negativity_map points={len(rows)} comparator={markovian_comparator} latency_ms={elapsed_ms:.2f}")
    return rows
