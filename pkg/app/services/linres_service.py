# app/services/linres_service.py
import cmath
import math
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import bisect

from app.core.errors import (
    BracketFailure,
    EigensolverFailure,
    InconsistentSteadyState,
    OutOfRegime,
    ToolkitError,
)
from app.core.settings import get_thread_count
from app.schemas.physics import (
    EigenflowPoint,
    EigenflowResult,
    EigenSpectrum,
    EmbeddedMatrix,
    Frame,
    Phase,
    SteadyState,
    SystemParams,
)
from app.services import meanfield_service

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
ZERO_TOL = 1e-8
RESIDUAL_TOL = 1e-8
BISECTION_XTOL = 1e-13
CRITICAL_BRACKET = (0.0, 4.0)
GOLDSTONE_SHIFT = 1.0
GOLDSTONE_TOL = 1e-6

QUADRATURE_LABELS = ["x+", "x-", "xP", "y+", "y-", "yP"]
MEMORY_LABELS = ["cx+", "cx-", "cy+", "cy-"]
X_BLOCK = ("x+", "x-", "xP", "cx+", "cx-")
Y_BLOCK = ("y+", "y-", "yP", "cy+", "cy-")


class GoldstoneMode(NamedTuple):
    index: int
    right: np.ndarray
    left: np.ndarray
    regularized: np.ndarray


# --- Closed forms ---

def disordered_eigenvalues_closed_form(mu: float, kappa: float) -> Tuple[complex, complex]:
    """Amplified-branch eigenvalues of the disordered phase, principal square root."""
    if math.isinf(kappa):
        return complex((mu - 1.0) / 2.0), complex(-math.inf)
    root = cmath.sqrt(complex((mu + 2.0 * kappa) ** 2 - 8.0 * kappa))
    base = mu - 2.0 * kappa
    return (base + root) / 4.0, (base - root) / 4.0


def exceptional_point_drive(kappa: float) -> Optional[float]:
    if math.isinf(kappa) or kappa > 2.0:
        return None
    return math.sqrt(8.0 * kappa) - 2.0 * kappa


# --- Embedded generator ---

def _complex_generator(params: SystemParams, ss: SteadyState) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linearization dz/dt = L z + N conj(z) with z = (B_i, B_s, A_P[, d_i, d_s]) in the
    frame where the mean field is static. d_k are the memory variables of the kernel.
    """
    markov = params.is_markovian
    n = 3 if markov else 5
    L = np.zeros((n, n), dtype=complex)
    N = np.zeros((n, n), dtype=complex)

    delta_i = ss.signed_delta
    delta_s = -delta_i
    b_i, b_s, a_p = ss.idler_amplitude, ss.signal_amplitude, ss.pump_amp
    gamma_p = params.pump_rate

    L[0, 0] = 1j * delta_i
    L[1, 1] = 1j * delta_s
    if markov:
        L[0, 0] -= 0.5
        L[1, 1] -= 0.5
    else:
        L[0, 3] = -0.5
        L[1, 4] = -0.5
    L[0, 2] = 0.5j * np.conj(b_s)
    L[1, 2] = 0.5j * np.conj(b_i)
    N[0, 1] = 0.5j * a_p
    N[1, 0] = 0.5j * a_p

    L[2, 2] = -0.5 * gamma_p
    L[2, 0] = 0.5j * gamma_p * b_s
    L[2, 1] = 0.5j * gamma_p * b_i

    if not markov:
        kappa = params.kappa
        L[3, 3] = 1j * delta_i - kappa
        L[3, 0] = kappa
        L[4, 4] = 1j * delta_s - kappa
        L[4, 1] = kappa
    return L, N


def _cross_quadrature_rotation(n: int) -> np.ndarray:
    """Maps (Re z, Im z) onto the cross-quadrature ordering of the labels."""
    s = 1.0 / math.sqrt(2.0)
    T = np.zeros((2 * n, 2 * n))
    rows = [
        (0, {0: s, 1: s}), (1, {0: s, 1: -s}), (2, {2: 1.0}),
        (3, {n: s, n + 1: s}), (4, {n: s, n + 1: -s}), (5, {n + 2: 1.0}),
    ]
    if n == 5:
        rows += [
            (6, {3: s, 4: s}), (7, {3: s, 4: -s}),
            (8, {n + 3: s, n + 4: s}), (9, {n + 3: s, n + 4: -s}),
        ]
    for row, entries in rows:
        for col, value in entries.items():
            T[row, col] = value
    return T


def build_embedded_matrix(params: SystemParams, ss: SteadyState) -> EmbeddedMatrix:
    residual = meanfield_service.self_consistency_residual(params, ss)
    if residual > RESIDUAL_TOL:
        raise InconsistentSteadyState(
            f"Steady state does not solve the mean-field equations (residual={residual:.3e})",
            point={"mu": params.mu, "kappa": params.kappa, "phase": ss.phase.value},
        )

    L, N = _complex_generator(params, ss)
    J = np.block([
        [L.real + N.real, N.imag - L.imag],
        [L.imag + N.imag, L.real - N.real],
    ])
    n = L.shape[0]
    T = _cross_quadrature_rotation(n)
    labels = QUADRATURE_LABELS + (MEMORY_LABELS if n == 5 else [])
    frame = Frame.STATIC if ss.delta == 0 else Frame.CO_ROTATING
    return EmbeddedMatrix(
        matrix=T @ J @ T.T, labels=labels, frame=frame,
        frame_delta=ss.signed_delta, phase=ss.phase,
    )


# --- Spectra of the generator ---

def eigenspectrum(m: EmbeddedMatrix) -> EigenSpectrum:
    if not np.all(np.isfinite(m.matrix)):
        raise EigensolverFailure("Generator has non-finite entries")
    try:
        w, v = scipy.linalg.eig(m.matrix)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverFailure(f"Eigensolver did not converge: {e}") from e
    if not np.all(np.isfinite(w)):
        raise EigensolverFailure("Eigensolver returned non-finite eigenvalues")

    order = np.lexsort((-w.imag, -w.real))
    w, v = w[order], v[:, order]
    max_re = float(w.real.max())
    return EigenSpectrum(eigenvalues=w, eigenvectors=v, max_re=max_re, stable=max_re <= ZERO_TOL)


def relaxation_bound(spectrum: EigenSpectrum, exclude_goldstone: bool = False) -> float:
    """Least-negative real part, optionally without the symmetry zero mode."""
    w = spectrum.eigenvalues
    if exclude_goldstone:
        idx = int(np.argmin(np.abs(w)))
        if abs(w[idx]) < GOLDSTONE_TOL:
            w = np.delete(w, idx)
    return float(w.real.max())


def goldstone_mode(m: EmbeddedMatrix, tol: float = GOLDSTONE_TOL) -> Optional[GoldstoneMode]:
    """
    Zero mode of an ordered phase with its left/right eigenvectors, plus a
    generator in which only that eigenvalue is moved to -GOLDSTONE_SHIFT.
    """
    w, vl, vr = scipy.linalg.eig(m.matrix, left=True, right=True)
    idx = int(np.argmin(np.abs(w)))
    if abs(w[idx]) > tol:
        return None
    right = np.real(vr[:, idx] / vr[np.argmax(np.abs(vr[:, idx])), idx])
    left = np.real(vl[:, idx] / vl[np.argmax(np.abs(vl[:, idx])), idx])
    projector = np.outer(right, left) / (left @ right)
    return GoldstoneMode(
        index=idx, right=right, left=left,
        regularized=m.matrix - GOLDSTONE_SHIFT * projector,
    )


def divergent_quadratures(m: EmbeddedMatrix, mode: Optional[GoldstoneMode]) -> List[str]:
    if mode is None:
        return []
    weights = np.abs(mode.right[:6])
    scale = np.linalg.norm(mode.right)
    return [label for label, w in zip(QUADRATURE_LABELS, weights) if w > 1e-6 * scale]


def susceptibility_from_generator(matrix: np.ndarray, omega: complex, n_signal: int = 6) -> np.ndarray:
    """
    Sigma~(omega) + i*omega*I on the six quadratures, from the Schur complement of
    the memory block. omega may be complex.
    """
    a_ss = matrix[:n_signal, :n_signal]
    eye = np.eye(n_signal)
    if matrix.shape[0] == n_signal:
        return a_ss + 1j * omega * eye
    a_sm = matrix[:n_signal, n_signal:]
    a_ms = matrix[n_signal:, :n_signal]
    a_mm = matrix[n_signal:, n_signal:]
    memory = a_mm + 1j * omega * np.eye(a_mm.shape[0])
    return a_ss - a_sm @ np.linalg.solve(memory, a_ms) + 1j * omega * eye


# --- Oracles ---

def _block_indices(m: EmbeddedMatrix) -> List[List[int]]:
    x_idx = [i for i, label in enumerate(m.labels) if label in X_BLOCK]
    y_idx = [i for i, label in enumerate(m.labels) if label in Y_BLOCK]
    if np.allclose(m.matrix[np.ix_(x_idx, y_idx)], 0.0) and np.allclose(m.matrix[np.ix_(y_idx, x_idx)], 0.0):
        return [x_idx, y_idx]
    return [list(range(m.dim))]


def determinant_poles(params: SystemParams, ss: SteadyState) -> np.ndarray:
    """
    Roots lambda = -i*omega of Det[Sigma~(omega) + i*omega*I], found without an
    eigensolver: the rationalized determinant det(A_mm - lambda)*Det[...] is sampled
    on a circle, its coefficients recovered by FFT and handed to numpy.roots.
    X and Y blocks are treated separately when they decouple.
    """
    m = build_embedded_matrix(params, ss)
    roots = []
    for idx in _block_indices(m):
        block = m.matrix[np.ix_(idx, idx)]
        n = len(idx)
        n_signal = sum(1 for i in idx if m.labels[i] in QUADRATURE_LABELS)
        radius = max(1.0, np.linalg.norm(block, ord=np.inf))
        n_samples = 2 * n + 2
        nodes = radius * np.exp(2j * np.pi * (np.arange(n_samples) + 0.5) / n_samples)

        values = np.empty(n_samples, dtype=complex)
        for j, lam in enumerate(nodes):
            omega = 1j * lam
            sus = susceptibility_from_generator(block, omega, n_signal=n_signal)
            memory = block[n_signal:, n_signal:] - lam * np.eye(n - n_signal)
            values[j] = np.linalg.det(sus) * (np.linalg.det(memory) if n > n_signal else 1.0)

        # sample offset by half a node: undo the phase before dividing out radius^k
        k = np.arange(n_samples)
        coeffs = np.fft.fft(values) / n_samples
        coeffs = coeffs * np.exp(-1j * np.pi * k / n_samples) / radius ** k
        roots.append(np.roots(coeffs[: n + 1][::-1]))

    poles = np.concatenate(roots)
    return poles[np.lexsort((-poles.imag, -poles.real))]


def exceptional_point_defect(kappa: float) -> Tuple[float, float]:
    """Eigenvalue gap and smallest principal angle of the coalescing pair at mu_EP."""
    mu_ep = exceptional_point_drive(kappa)
    if mu_ep is None:
        raise OutOfRegime(f"No exceptional point for kappa={kappa}", point={"kappa": kappa})
    params = SystemParams.from_kappa(kappa, mu=mu_ep)
    ss = meanfield_service.steady_state(params, phase=Phase.DISORDERED)
    m = build_embedded_matrix(params, ss)
    idx = [m.labels.index("x-"), m.labels.index("cx-")]
    w, v = scipy.linalg.eig(m.matrix[np.ix_(idx, idx)])
    angle = float(np.min(scipy.linalg.subspace_angles(v[:, [0]], v[:, [1]])))
    return float(abs(w[0] - w[1])), angle


# --- Sweeps ---

def _branch_bound(params: SystemParams, mu: float, phase: Phase) -> float:
    point = params.with_point(mu, params.kappa)
    ss = meanfield_service.steady_state(point, phase=phase)
    spectrum = eigenspectrum(build_embedded_matrix(point, ss))
    return relaxation_bound(spectrum, exclude_goldstone=phase != Phase.DISORDERED)


def locate_critical_drive(params: SystemParams, phase: Phase = Phase.DISORDERED) -> float:
    """Drive at which the relaxation bound of `phase` crosses zero, by bisection."""
    lo, hi = CRITICAL_BRACKET
    if phase == Phase.U1:
        lo = 1.0 + 1e-9
    elif phase == Phase.U1XZ2:
        lo = 2.0 * params.kappa + 1e-9
    f = lambda mu: _branch_bound(params, mu, phase)

    try:
        f_lo, f_hi = f(lo), f(hi)
    except OutOfRegime as e:
        raise BracketFailure(f"Branch {phase.value} does not span the bracket: {e.message}",
                             point={"kappa": params.kappa}) from e
    if np.sign(f_lo) == np.sign(f_hi):
        raise BracketFailure(
            f"No sign change of the relaxation bound on [{lo:g}, {hi:g}] "
            f"(f_lo={f_lo:.3e}, f_hi={f_hi:.3e})",
            point={"kappa": params.kappa, "phase": phase.value},
        )
    mu_c = bisect(f, lo, hi, xtol=BISECTION_XTOL, maxiter=200)
    logger.info(f"locate_critical_drive kappa={params.kappa:g} phase={phase.value} mu_c={mu_c:.12f}")
    return float(mu_c)


def _eigenflow_point(params: SystemParams, mu: float, phase: Phase) -> EigenflowPoint:
    try:
        point = params.with_point(mu, params.kappa)
        ss = meanfield_service.steady_state(point, phase=phase)
        spectrum = eigenspectrum(build_embedded_matrix(point, ss))
        return EigenflowPoint(mu=mu, phase=phase, eigenvalues=[complex(w) for w in spectrum.eigenvalues])
    except ToolkitError as e:
        return EigenflowPoint(mu=mu, phase=phase, error=e.code)


def eigenflow_sweep(
    kappa: float,
    mu_grid: Sequence[float],
    phases: Optional[Sequence[Phase]] = None,
    base: Optional[SystemParams] = None,
) -> EigenflowResult:
    """
    Spectra along mu for each requested branch, unstable ones included. Branches
    that do not exist at a grid point come back with error='OutOfRegime'.
    """
    phases = list(phases or [Phase.DISORDERED, Phase.U1, Phase.U1XZ2])
    base = (base or SystemParams()).with_point(0.0, kappa)
    jobs = [(mu, phase) for phase in phases for mu in mu_grid]

    start_time = time.time()
    with ThreadPoolExecutor(max_workers=get_thread_count()) as pool:
        points = list(pool.map(lambda job: _eigenflow_point(base, job[0], job[1]), jobs))
    elapsed_ms = (time.time() - start_time) * 1000
    logger.info(f"eigenflow_sweep kappa={kappa:g} points={len(points)} latency_ms={elapsed_ms:.2f}")

    return EigenflowResult(
        kappa=kappa,
        mu_cr=meanfield_service.critical_drive(kappa),
        mu_ep=exceptional_point_drive(kappa),
        points=points,
    )
