# app/services/sde_service.py
import math
import time
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d
from scipy.signal import welch

from app.core.errors import InsufficientSamples, NonStationary, ParameterError, StepOverflow, ToolkitError
from app.schemas.physics import (
    Frame,
    OrderParameters,
    Phase,
    Scheme,
    SimConfig,
    SystemParams,
    Trajectory,
    VarianceReport,
)
from app.services import linres_service, meanfield_service, spectra_service

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
STEP_FRACTION = 20.0
BURN_MULTIPLE = 20.0
SEED_PERTURBATION = (0.01 + 0.0j, 0.01j)
MIN_WINDOWS = 4
BLOCKS_FOR_SE = 10


# --- Colored noise ---

def ou_noise_step(
    f: Union[complex, np.ndarray],
    dt: float,
    tau_r: float,
    strength: float,
    rng: Optional[np.random.Generator] = None,
    normals: Optional[np.ndarray] = None,
) -> Union[complex, np.ndarray]:
    """
    Exact Ornstein-Uhlenbeck update of a complex noise with stationary
    E|f|^2 = strength/(2*tau_r). `normals` (shape (2,) + f.shape) replaces draws from rng.
    """
    if tau_r <= 0:
        raise ValueError("ou_noise_step needs tau_r > 0")
    decay = math.exp(-dt / tau_r)
    variance = strength / (2.0 * tau_r) * (1.0 - decay * decay)
    if normals is None:
        rng = rng or np.random.default_rng()
        normals = rng.standard_normal((2,) + np.shape(f))
    eta = math.sqrt(0.5 * variance) * (normals[0] + 1j * normals[1])
    return f * decay + eta


# --- Configuration checks ---

def check_config(params: SystemParams, config: SimConfig) -> None:
    tau = params.tau_r * params.gamma0
    limits = [2.0 / params.pump_rate, 1.0] + ([] if params.is_markovian else [tau])
    dt_max = min(limits) / STEP_FRACTION
    burn_min = BURN_MULTIPLE * max(1.0, tau)
    violations = []
    if config.dt > dt_max * (1 + 1e-12):
        violations.append({"code": "StepTooLarge", "field": "dt",
                           "message": f"dt={config.dt} exceeds {dt_max:.6g}"})
    if config.t_burn < burn_min:
        violations.append({"code": "BurnInTooShort", "field": "t_burn",
                           "message": f"t_burn={config.t_burn} is below {burn_min:.6g}"})
    if violations:
        raise ParameterError(violations)

    try:
        ss = meanfield_service.steady_state(params)
        spectrum = linres_service.eigenspectrum(linres_service.build_embedded_matrix(params, ss))
        bound = linres_service.relaxation_bound(spectrum, exclude_goldstone=ss.phase != Phase.DISORDERED)
    except ToolkitError:
        return
    if bound < 0 and config.t_burn < BURN_MULTIPLE / abs(bound):
        logger.warning(
            f"t_burn={config.t_burn} is shorter than {BURN_MULTIPLE:g} relaxation times "
            f"({BURN_MULTIPLE / abs(bound):.1f}); early samples may carry the transient."
        )


def _pump_noise_on(params: SystemParams, config: SimConfig) -> bool:
    if config.pump_noise is not None:
        return config.pump_noise
    return meanfield_service.classify_phase(params.mu, params.kappa) != Phase.DISORDERED


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


# --- Integrator ---

class _Model:
    """Drift of the scaled equations with the memory convolution embedded."""

    def __init__(self, params: SystemParams):
        self.markov = params.is_markovian
        self.kappa = params.kappa
        self.gamma_p = params.pump_rate
        self.mu = params.mu

    def drift(self, a_i, a_s, a_p, c_i, c_s, f_i, f_s):
        damp_i, damp_s = (a_i, a_s) if self.markov else (c_i, c_s)
        da_i = -0.5 * damp_i + 0.5j * np.conj(a_s) * a_p + 1j * f_i
        da_s = -0.5 * damp_s + 0.5j * np.conj(a_i) * a_p + 1j * f_s
        da_p = 0.5 * self.gamma_p * (-a_p + 1j * a_i * a_s + 1j * self.mu)
        if self.markov:
            return da_i, da_s, da_p, 0.0, 0.0
        return da_i, da_s, da_p, self.kappa * (a_i - c_i), self.kappa * (a_s - c_s)


def integrate_trajectories(
    params: SystemParams,
    config: SimConfig,
    initial: Optional[Tuple[complex, complex, complex]] = None,
    indices: Optional[Sequence[int]] = None,
) -> List[Trajectory]:
    """
    Evolves a batch of trajectories side by side. Trajectory k draws its noise
    from its own stream derived from (seed, k), so a trajectory is the same
    whatever batch it runs in.
    """
    check_config(params, config)
    indices = list(range(config.n_traj)) if indices is None else list(indices)
    n = len(indices)
    model = _Model(params)
    dt = config.dt
    tau = params.tau_r * params.gamma0
    eps2 = params.noise_scale
    noise = config.noise
    pump_noise = noise and _pump_noise_on(params, config)
    heun = config.scheme == Scheme.STOCHASTIC_HEUN

    n_burn = int(round(config.t_burn / dt))
    n_sample = int(round(config.t_sample / dt))
    n_steps = n_burn + n_sample
    n_rec = n_sample // config.record_every + 1
    n_cols = (4 if noise else 0) + (2 if pump_noise else 0)

    if initial is None:
        initial = (SEED_PERTURBATION[0], SEED_PERTURBATION[1], 1j * params.mu)
    a_i = np.full(n, initial[0], dtype=complex)
    a_s = np.full(n, initial[1], dtype=complex)
    a_p = np.full(n, initial[2], dtype=complex)
    c_i, c_s = a_i.copy(), a_s.copy()
    f_i = np.zeros(n, dtype=complex)
    f_s = np.zeros(n, dtype=complex)

    strength_i = eps2 * (params.n_th_i + 0.5)
    strength_s = eps2 * (params.n_th_s + 0.5)
    white_i = math.sqrt(0.5 * strength_i * dt)
    white_s = math.sqrt(0.5 * strength_s * dt)
    white_p = math.sqrt(0.5 * eps2 * params.pump_rate ** 2 * (params.n_th_P + 0.5) * dt)

    rngs = [_rng(config.seed, k) for k in indices]
    if noise and not model.markov:
        # start the colored noise in its stationary state
        z = np.array([rng.standard_normal(4) for rng in rngs]).T
        f_i = math.sqrt(0.25 * strength_i / tau) * (z[0] + 1j * z[1])
        f_s = math.sqrt(0.25 * strength_s / tau) * (z[2] + 1j * z[3])

    record = {key: np.empty((n_rec, n), dtype=complex) for key in ("A_i", "A_s", "A_P", "c_i", "c_s", "f_i", "f_s")}
    start_time = time.time()
    step = 0
    rec = 0
    while step < n_steps:
        block = min(config.block_steps, n_steps - step)
        if n_cols:
            draws = np.stack([rng.standard_normal((block, n_cols)) for rng in rngs], axis=1)
        for j in range(block):
            if step >= n_burn and (step - n_burn) % config.record_every == 0 and rec < n_rec:
                for key, value in (("A_i", a_i), ("A_s", a_s), ("A_P", a_p), ("c_i", c_i),
                                   ("c_s", c_s), ("f_i", f_i), ("f_s", f_s)):
                    record[key][rec] = value
                rec += 1

            dw_i = dw_s = dw_p = 0.0
            f_i_next, f_s_next = f_i, f_s
            if noise:
                z = draws[j]
                if model.markov:
                    dw_i = white_i * (z[:, 0] + 1j * z[:, 1])
                    dw_s = white_s * (z[:, 2] + 1j * z[:, 3])
                else:
                    f_i_next = ou_noise_step(f_i, dt, tau, strength_i, normals=z[:, 0:2].T)
                    f_s_next = ou_noise_step(f_s, dt, tau, strength_s, normals=z[:, 2:4].T)
                if pump_noise:
                    dw_p = white_p * (z[:, 4] + 1j * z[:, 5])

            k1 = model.drift(a_i, a_s, a_p, c_i, c_s, f_i, f_s)
            p_i = a_i + k1[0] * dt + 1j * dw_i
            p_s = a_s + k1[1] * dt + 1j * dw_s
            p_p = a_p + k1[2] * dt + dw_p
            p_ci = c_i + k1[3] * dt
            p_cs = c_s + k1[4] * dt
            if heun:
                k2 = model.drift(p_i, p_s, p_p, p_ci, p_cs, f_i_next, f_s_next)
                p_i = a_i + 0.5 * (k1[0] + k2[0]) * dt + 1j * dw_i
                p_s = a_s + 0.5 * (k1[1] + k2[1]) * dt + 1j * dw_s
                p_p = a_p + 0.5 * (k1[2] + k2[2]) * dt + dw_p
                p_ci = c_i + 0.5 * (k1[3] + k2[3]) * dt
                p_cs = c_s + 0.5 * (k1[4] + k2[4]) * dt
            a_i, a_s, a_p, c_i, c_s = p_i, p_s, p_p, p_ci, p_cs
            f_i, f_s = f_i_next, f_s_next
            step += 1

        if not (np.all(np.isfinite(a_i)) and np.all(np.isfinite(a_s)) and np.all(np.isfinite(a_p))):
            raise StepOverflow(
                f"Non-finite state by step {step} (t={step * dt:.4g}); reduce dt below {dt}",
                point={"mu": params.mu, "kappa": params.kappa, "dt": dt},
            )

    if rec < n_rec and step >= n_burn:
        for key, value in (("A_i", a_i), ("A_s", a_s), ("A_P", a_p), ("c_i", c_i),
                           ("c_s", c_s), ("f_i", f_i), ("f_s", f_s)):
            record[key][rec] = value
        rec += 1

    elapsed_ms = (time.time() - start_time) * 1000
    logger.info(
        f"integrate_trajectories mu={params.mu:g} kappa={params.kappa:g} n_traj={n} steps={n_steps} "
        f"scheme={config.scheme.value} latency_ms={elapsed_ms:.2f}"
    )

    t = (n_burn + config.record_every * np.arange(rec)) * dt
    trajs = []
    for col, index in enumerate(indices):
        memory = {} if model.markov else {
            "c_i": record["c_i"][:rec, col].copy(), "c_s": record["c_s"][:rec, col].copy(),
            "f_i": record["f_i"][:rec, col].copy(), "f_s": record["f_s"][:rec, col].copy(),
        }
        trajs.append(Trajectory(
            index=index, t=t.copy(),
            A_i=record["A_i"][:rec, col].copy(), A_s=record["A_s"][:rec, col].copy(),
            A_P=record["A_P"][:rec, col].copy(), **memory,
        ))
    return trajs


def integrate_trajectory(
    params: SystemParams,
    config: SimConfig,
    initial: Optional[Tuple[complex, complex, complex]] = None,
    index: int = 0,
) -> Trajectory:
    return integrate_trajectories(params, config, initial, indices=[index])[0]


# --- Estimators ---

def _standard_error(per_traj: np.ndarray, series: Optional[np.ndarray] = None) -> float:
    """Ensemble standard error, or block averaging of one series when there is a single trajectory."""
    if len(per_traj) > 1:
        return float(np.std(per_traj, ddof=1) / math.sqrt(len(per_traj)))
    if series is None or len(series) < BLOCKS_FOR_SE:
        return math.nan
    blocks = np.array([b.mean() for b in np.array_split(series, BLOCKS_FOR_SE)])
    return float(np.std(blocks, ddof=1) / math.sqrt(BLOCKS_FOR_SE))


def _window_samples(trajs: Sequence[Trajectory], window: float) -> int:
    if not trajs or len(trajs[0].t) < 2:
        raise InsufficientSamples("Need at least two recorded samples per trajectory")
    size = max(1, int(round(window / trajs[0].record_dt)))
    if len(trajs[0].t) < MIN_WINDOWS * size:
        raise InsufficientSamples(
            f"{len(trajs[0].t)} samples cover fewer than {MIN_WINDOWS} smoothing windows of {size} samples"
        )
    return size


def _difference_phase(traj: Trajectory) -> np.ndarray:
    return np.unwrap(np.angle(traj.A_i * np.conj(traj.A_s)))


def estimate_order_parameters(trajs: Sequence[Trajectory], window: float = 5.0) -> OrderParameters:
    size = _window_samples(trajs, window)
    dt_rec = trajs[0].record_dt
    edge = size // 2 + 1

    amps, deltas, var_dots = [], [], []
    for traj in trajs:
        amps.append(np.abs(traj.A_i).mean())
        slope = np.polyfit(traj.t, np.unwrap(np.angle(traj.A_i)), 1)[0]
        deltas.append(-slope)
        phi = uniform_filter1d(_difference_phase(traj), size=size, mode="nearest")
        phi_dot = np.gradient(phi, dt_rec)[edge:-edge]
        var_dots.append(phi_dot.var())
    amps, deltas, var_dots = np.array(amps), np.array(deltas), np.array(var_dots)

    series = np.abs(trajs[0].A_i)
    return OrderParameters(
        amp_mean=float(amps.mean()), amp_se=_standard_error(amps, series),
        delta_est=float(deltas.mean()), delta_se=_standard_error(deltas),
        delta_abs_est=float(np.abs(deltas).mean()),
        delta_per_trajectory=[float(d) for d in deltas],
        var_phi_dot=float(var_dots.mean()), var_phi_dot_se=_standard_error(var_dots),
        smoothing_window=window, n_samples=len(trajs[0].t),
    )


def _cross_quadratures(traj: Trajectory, frame: Frame, eps: float, size: int) -> dict:
    b_i, b_s = traj.A_i, traj.A_s
    if frame == Frame.CO_ROTATING:
        psi = uniform_filter1d(_difference_phase(traj), size=size, mode="nearest")
        b_i = b_i * np.exp(-0.5j * psi)
        b_s = b_s * np.exp(0.5j * psi)
    d_i = b_i - b_i.mean()
    d_s = b_s - b_s.mean()
    return {
        "x+": (d_i.real + d_s.real) / eps, "x-": (d_i.real - d_s.real) / eps,
        "y+": (d_i.imag + d_s.imag) / eps, "y-": (d_i.imag - d_s.imag) / eps,
    }


def estimate_quadrature_variances(
    trajs: Sequence[Trajectory],
    frame: Frame,
    params: SystemParams,
    window: float = 5.0,
) -> VarianceReport:
    """
    Sample variances of x+-, y+- in physical quadrature units, ensemble standard
    errors attached. x- is reported divergent in the ordered phases.
    """
    size = _window_samples(trajs, window)
    eps = math.sqrt(params.noise_scale)
    phase = meanfield_service.classify_phase(params.mu, params.kappa)
    divergent = {"x-"} if phase != Phase.DISORDERED else set()

    per_label = {label: ([], [], []) for label in spectra_service.REPORTED}
    squared = {}
    for traj in trajs:
        quads = _cross_quadratures(traj, frame, eps, size)
        for label, series in quads.items():
            half = len(series) // 2
            full, first, second = per_label[label]
            full.append(series.var())
            first.append(series[:half].var())
            second.append(series[half:].var())
            if len(trajs) == 1:
                # squared deviations of each half, for block standard errors
                squared[label] = tuple((s - s.mean()) ** 2 for s in (series, series[:half], series[half:]))

    absolute, errors = {}, {}
    for label, (full, first, second) in per_label.items():
        if label in divergent:
            absolute[label] = None
            continue
        full, first, second = np.array(full), np.array(first), np.array(second)
        sq_full, sq_first, sq_second = squared.get(label, (None, None, None))
        se1 = _standard_error(first, sq_first)
        se2 = _standard_error(second, sq_second)
        if math.isfinite(se1) and math.isfinite(se2) and \
                abs(first.mean() - second.mean()) > 3.0 * math.hypot(se1, se2):
            raise NonStationary(
                f"{label} variance drifts between halves ({first.mean():.4g} vs {second.mean():.4g})",
                point={"mu": params.mu, "kappa": params.kappa},
            )
        absolute[label] = float(full.mean())
        errors[label] = _standard_error(full, sq_full)

    return spectra_service.build_variance_report(
        phase, "monte-carlo", params.thermal_variance, absolute, std_errors=errors,
        metadata={"frame": frame.value, "n_traj": len(trajs), "smoothing_window": window},
    )


def welch_spectrum(
    trajs: Sequence[Trajectory],
    quadrature: str,
    params: SystemParams,
    frame: Frame = Frame.STATIC,
    nperseg: int = 1024,
) -> Tuple[np.ndarray, np.ndarray]:
    """Two-sided Welch PSD of one cross-quadrature, normalized so that its omega-integral is the variance."""
    eps = math.sqrt(params.noise_scale)
    dt_rec = trajs[0].record_dt
    size = max(1, int(round(5.0 / dt_rec)))
    estimates = []
    for traj in trajs:
        series = _cross_quadratures(traj, frame, eps, size)[quadrature]
        freqs, power = welch(series, fs=1.0 / dt_rec, nperseg=min(nperseg, len(series)),
                             return_onesided=False, scaling="density")
        estimates.append(power)
    order = np.argsort(freqs)
    omega = 2.0 * math.pi * freqs[order]
    spectrum = np.mean(estimates, axis=0)[order] / (2.0 * math.pi)
    return omega, spectrum


# --- Output ---

def trajectory_frame(traj: Trajectory, decimate: int = 1) -> pd.DataFrame:
    sl = slice(None, None, max(1, decimate))
    return pd.DataFrame({
        "t": traj.t[sl],
        "re_A_i": traj.A_i.real[sl], "im_A_i": traj.A_i.imag[sl],
        "re_A_s": traj.A_s.real[sl], "im_A_s": traj.A_s.imag[sl],
        "re_A_P": traj.A_P.real[sl], "im_A_P": traj.A_P.imag[sl],
    })


def write_trajectory_csv(traj: Trajectory, path: str, decimate: int = 1) -> None:
    trajectory_frame(traj, decimate).to_csv(path, index=False, float_format="%.12g")
