# app/services/meanfield_service.py
import math
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

from app.core.errors import OutOfRegime, ToolkitError
from app.core.settings import get_thread_count
from app.schemas.physics import MemoryKernel, Phase, PhaseDiagramPoint, SteadyState, SystemParams
from app.services import model_service

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
MEMORY_CROSSOVER = 0.5  # kappa at which the critical drive and Delta change branch


def critical_drive(kappa: float) -> float:
    if kappa >= MEMORY_CROSSOVER:
        return 1.0
    return 2.0 * kappa


def frequency_shift(kappa: float) -> float:
    if kappa >= MEMORY_CROSSOVER:
        return 0.0
    return kappa * math.sqrt(1.0 / (2.0 * kappa) - 1.0)


def classify_phase(mu: float, kappa: float) -> Phase:
    if mu <= critical_drive(kappa):
        return Phase.DISORDERED
    if kappa >= MEMORY_CROSSOVER:
        return Phase.U1
    return Phase.U1XZ2


def steady_state(
    params: SystemParams,
    z2_branch: int = 1,
    phi: float = 0.0,
    phase: Optional[Phase] = None,
) -> SteadyState:
    """
    Mean-field solution at (mu, kappa). Without `phase` the stable branch is
    returned; with it, the requested branch is continued analytically (unstable
    branches included) as long as its squared amplitude is nonnegative.
    """
    mu, kappa = params.mu, params.kappa
    mu_cr = critical_drive(kappa)
    if phase is None:
        phase = classify_phase(mu, kappa)

    if phase == Phase.DISORDERED:
        return SteadyState(
            phase=phase, amp_signal=0.0, amp_idler=0.0, pump_amp=complex(0.0, mu),
            delta=0.0, z2_branch=z2_branch, phi=phi, mu=mu, kappa=kappa, mu_cr=mu_cr,
        )

    if phase == Phase.U1:
        branch_cr, delta = 1.0, 0.0
    else:
        if kappa >= MEMORY_CROSSOVER:
            raise OutOfRegime(
                f"No frequency-shifted solution exists for kappa={kappa} >= {MEMORY_CROSSOVER}",
                point={"mu": mu, "kappa": kappa, "phase": phase.value},
            )
        branch_cr, delta = 2.0 * kappa, frequency_shift(kappa)

    if mu < branch_cr:
        raise OutOfRegime(
            f"The {phase.value} branch needs mu >= {branch_cr:g}, got mu={mu}",
            point={"mu": mu, "kappa": kappa, "phase": phase.value},
        )
    amp = math.sqrt(mu - branch_cr)
    return SteadyState(
        phase=phase, amp_signal=amp, amp_idler=amp, pump_amp=complex(0.0, branch_cr),
        delta=delta, z2_branch=z2_branch, phi=phi, mu=mu, kappa=kappa, mu_cr=mu_cr,
    )


def self_consistency_residual(params: SystemParams, ss: SteadyState, t: float = 0.0) -> float:
    """
    Largest modulus of (d/dt ansatz - drift) for the noiseless scaled equations,
    with the idler rotating as exp(-i*Delta_i*t) and the signal as exp(+i*Delta_i*t).
    The memory convolution of a rotating amplitude is gamma~(Delta) times that amplitude.
    """
    kernel = MemoryKernel(gamma0=1.0, tau_r=params.tau_r * params.gamma0)
    delta_i = ss.signed_delta
    delta_s = -delta_i
    a_i = ss.idler_amplitude * complex(math.cos(delta_i * t), -math.sin(delta_i * t))
    a_s = ss.signal_amplitude * complex(math.cos(delta_s * t), -math.sin(delta_s * t))
    a_p = ss.pump_amp
    gamma_p = params.pump_rate

    r_i = -1j * delta_i * a_i - 0.5 * (-model_service.kernel_freq(kernel, delta_i) * a_i + 1j * a_s.conjugate() * a_p)
    r_s = -1j * delta_s * a_s - 0.5 * (-model_service.kernel_freq(kernel, delta_s) * a_s + 1j * a_i.conjugate() * a_p)
    r_p = -0.5 * gamma_p * (-a_p + 1j * a_i * a_s + 1j * params.mu)
    return max(abs(r_i), abs(r_s), abs(r_p))


# --- Phase diagram ---

def _phase_diagram_point(base: SystemParams, mu: float, kappa: float) -> PhaseDiagramPoint:
    from app.services import linres_service

    phase = classify_phase(mu, kappa)
    try:
        params = base.with_point(mu, kappa)
        ss = steady_state(params)
        spectrum = linres_service.eigenspectrum(linres_service.build_embedded_matrix(params, ss))
        max_re = linres_service.relaxation_bound(spectrum, exclude_goldstone=phase != Phase.DISORDERED)
        return PhaseDiagramPoint(mu=mu, kappa=kappa, phase=phase, max_re_lambda=max_re)
    except ToolkitError as e:
        logger.warning(f"phase_diagram point failed mu={mu} kappa={kappa} error={e.code}: {e.message}")
        return PhaseDiagramPoint(mu=mu, kappa=kappa, phase=phase, max_re_lambda=math.nan, error=e.code)


def _check_grid(name: str, grid: Sequence[float]) -> None:
    if len(grid) == 0:
        raise ValueError(f"{name} grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"{name} grid must be strictly increasing")


def phase_diagram(
    mu_grid: Sequence[float],
    kappa_grid: Sequence[float],
    base: Optional[SystemParams] = None,
) -> List[PhaseDiagramPoint]:
    """
    Stable phase and its relaxation bound at every (mu, kappa). Rows come back
    kappa-major in grid order whatever the thread count.
    """
    _check_grid("mu", mu_grid)
    _check_grid("kappa", kappa_grid)
    base = base or SystemParams()
    points = [(mu, kappa) for kappa in kappa_grid for mu in mu_grid]

    start_time = time.time()
    threads = get_thread_count()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(lambda p: _phase_diagram_point(base, p[0], p[1]), points))
    elapsed_ms = (time.time() - start_time) * 1000
    failed = sum(1 for row in rows if row.error)
    logger.info(f"phase_diagram points={len(rows)} failed={failed} threads={threads} latency_ms={elapsed_ms:.2f}")
    return rows
