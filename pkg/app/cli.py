# app/cli.py
import sys
import json
import math
import argparse
import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.core.errors import OutputError, ParameterError, ToolkitError
from app.core.settings import TOOL_NAME, TOOL_VERSION, configure_logging
from app.schemas.physics import Phase, Scheme, SimConfig, SystemParams
from app.services import (
    export_service,
    linres_service,
    meanfield_service,
    model_service,
    sde_service,
    spectra_service,
)

logger = logging.getLogger(__name__)

# --- Constants & Configuration ---
EIGENFLOW_PRESETS = "1.25,0.5,0.15"
NEGATIVITY_KAPPA = "0.2"
EXIT_OK = 0

COLUMNS = {
    "steady-state": ["mu", "kappa", "phase", "amp_signal", "amp_idler", "pump_re", "pump_im", "delta", "mu_cr"],
    "phase-diagram": ["mu", "kappa", "phase", "max_re_lambda"],
    "eigenflow": ["mu", "kappa", "phase", "index", "re_lambda", "im_lambda", "mu_cr", "mu_ep"],
    "variances": ["mu", "kappa", "phase", "quadrature", "normalized", "absolute", "divergent"],
    "negativity": ["mu", "kappa", "n_th", "e_n", "sigma_sq_abs"],
    "simulate": ["kappa", "mu", "amp_mean", "amp_se", "delta_est", "delta_se", "var_phi_dot", "var_phi_dot_se"],
}

EPILOGS = {
    "steady-state": """columns:
  mu, kappa       grid point (kappa=inf is the Markovian limit)
  phase           stable phase: disordered | u1 | u1xz2
  amp_signal      mean-field signal amplitude (dimensionless)
  amp_idler       mean-field idler amplitude (dimensionless)
  pump_re/pump_im pump amplitude, real and imaginary part
  delta           magnitude of the frequency shift, units of gamma0
  mu_cr           critical drive at this kappa""",
    "phase-diagram": """columns:
  mu, kappa       grid point, kappa-major order
  phase           stable phase: disordered | u1 | u1xz2
  max_re_lambda   largest real part of the linearized spectrum, symmetry
                  zero mode excluded above threshold; nan if the point failed""",
    "eigenflow": """columns:
  mu, kappa       grid point
  phase           branch the system is linearized about (unstable branches included)
  index           eigenvalue index, ordered by real then imaginary part
  re_lambda       real part of the eigenvalue, units of gamma0
  im_lambda       imaginary part of the eigenvalue, units of gamma0
  mu_cr           critical drive at this kappa
  mu_ep           exceptional-point drive at this kappa; nan when there is none
kappa defaults to the presets 1.25, 0.5 and 0.15.""",
    "variances": """columns:
  mu, kappa       grid point
  phase           stable phase at the point
  quadrature      x+ | x- | y+ | y-, or 'mixed' for the optimal two-mode combination
  normalized      variance divided by the thermal variance n_th + 1/2
  absolute        variance in quadrature units (zero-point 1/2)
  divergent       true for the symmetry-protected quadrature above threshold""",
    "negativity": """columns:
  mu, kappa       grid point; kappa=inf rows are the Markovian comparator
  n_th            signal/idler thermal occupancy
  e_n             logarithmic negativity in bits (0 when separable)
  sigma_sq_abs    absolute squeezed variance
kappa defaults to 0.2. The pump reservoir occupancy follows --nth-pump,
or n_th when it is not given.""",
    "simulate": """columns:
  kappa, mu       grid point
  amp_mean/amp_se           time and ensemble mean of |A_i|, standard error
  delta_est/delta_se        mean phase winding rate of A_i, standard error
  var_phi_dot/var_phi_dot_se  variance of the smoothed instantaneous
                            difference frequency, standard error""",
}


# --- Argument parsing ---

def parse_grid(spec: str, name: str = "grid") -> List[float]:
    """'a:b:n' (n evenly spaced values, endpoints included) or a comma list. 'inf' is allowed."""
    try:
        if ":" in spec:
            lo, hi, count = spec.split(":")
            n = int(count)
            if n < 1:
                raise ValueError("count must be >= 1")
            return [float(v) for v in np.linspace(float(lo), float(hi), n)]
        return [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as e:
        raise ParameterError([{"code": "BadGrid", "field": name,
                               "message": f"cannot parse {spec!r}: {e}"}]) from e


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--gamma0", type=float, help="intrinsic damping rate gamma0")
    common.add_argument("--gammaP", type=float, help="pump damping rate gammaP")
    memory = common.add_mutually_exclusive_group()
    memory.add_argument("--tau-r", dest="tau_r", help="reservoir memory time, grid or value (0 = Markovian)")
    memory.add_argument("--kappa", help="normalized reservoir decay rate 1/(gamma0*tau_r), grid or value, 'inf' allowed")
    common.add_argument("--g", type=float, help="parametric coupling g")
    common.add_argument("--mu", help="normalized drive, grid 'a:b:n' or comma list")
    common.add_argument("--nth", help="signal/idler thermal occupancy (comma list for negativity)")
    common.add_argument("--nth-pump", dest="nth_pump", type=float, help="pump reservoir occupancy")
    common.add_argument("--params-file", dest="params_file", help="flat 'key = value' parameter file")
    common.add_argument("--seed", type=int, default=0, help="random seed (simulate)")
    common.add_argument("--out", default="-", help="output path, '-' for stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Mean-field, linear-response, spectral and stochastic analysis of a parametrically "
                    "driven two-mode system coupled to a reservoir with memory.",
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text, epilog=EPILOGS[name],
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    ss = add("steady-state", "mean-field steady state at each grid point")
    ss.add_argument("--phase", choices=[p.value for p in Phase], help="continue this branch instead of the stable one")

    add("phase-diagram", "stable phase and relaxation bound over a (mu, kappa) grid")

    ef = add("eigenflow", "linearized spectra along mu for each branch")
    ef.add_argument("--phases", default="disordered,u1,u1xz2", help="comma list of branches")

    var = add("variances", "stationary quadrature variances")
    var.add_argument("--method", choices=("auto", "closed-form", "lyapunov"), default="auto",
                     help="auto integrates the spectral density numerically")

    neg = add("negativity", "logarithmic negativity over (n_th, kappa, mu)")
    neg.add_argument("--markovian-comparator", dest="markovian_comparator", action="store_true",
                     help="append kappa=inf rows at every (n_th, mu)")

    sim = add("simulate", "order parameters from the nonlinear stochastic simulator")
    sim.add_argument("--dt", type=float, default=0.005)
    sim.add_argument("--t-burn", dest="t_burn", type=float, default=100.0)
    sim.add_argument("--t-sample", dest="t_sample", type=float, default=200.0)
    sim.add_argument("--n-traj", dest="n_traj", type=int, default=1)
    sim.add_argument("--scheme", choices=[s.value for s in Scheme], default=Scheme.STOCHASTIC_HEUN.value)
    sim.add_argument("--record-every", dest="record_every", type=int, default=10)
    sim.add_argument("--window", type=float, default=5.0, help="phase smoothing window, units of 1/gamma0")
    sim.add_argument("--no-noise", dest="noise", action="store_false")
    sim.add_argument("--dump-trajectory", dest="dump_trajectory",
                     help="write trajectory 0 of the first grid point to this CSV")
    return parser


# --- Parameter resolution ---

def _raw_params(args: argparse.Namespace) -> Dict[str, Any]:
    """Model defaults < parameter file < flags. Grid-valued flags are left out."""
    raw: Dict[str, Any] = {}
    if args.params_file:
        try:
            raw.update(model_service.load_param_file(args.params_file))
        except OSError as e:
            raise OutputError(f"Could not read {args.params_file}: {e}") from e
    for flag, field in (("gamma0", "gamma0"), ("gammaP", "gammaP"), ("g", "g")):
        value = getattr(args, flag)
        if value is not None:
            raw[field] = value
    return raw


def _kappa_grid(args: argparse.Namespace, raw: Dict[str, Any], default: str) -> List[float]:
    gamma0 = raw.get("gamma0", 1.0)
    if args.kappa is not None:
        return parse_grid(args.kappa, "kappa")
    if args.tau_r is not None:
        return [math.inf if t == 0 else 1.0 / (gamma0 * t) for t in parse_grid(args.tau_r, "tau_r")]
    if "kappa" in raw:
        return [raw["kappa"]]
    if "tau_r" in raw:
        return [math.inf if raw["tau_r"] == 0 else 1.0 / (gamma0 * raw["tau_r"])]
    return parse_grid(default, "kappa")


def _mu_grid(args: argparse.Namespace, raw: Dict[str, Any], default: str) -> List[float]:
    if args.mu is not None:
        return parse_grid(args.mu, "mu")
    if "mu" in raw:
        return [raw["mu"]]
    return parse_grid(default, "mu")


def _base_params(args: argparse.Namespace, raw: Dict[str, Any], n_th: Optional[float] = None) -> SystemParams:
    fields = {k: v for k, v in raw.items() if k not in ("mu", "kappa", "tau_r")}
    if n_th is not None:
        fields.update(n_th_i=n_th, n_th_s=n_th)
    if args.nth_pump is not None:
        fields["n_th_P"] = args.nth_pump
    elif n_th is not None and "n_th_P" not in fields:
        fields["n_th_P"] = n_th
    return model_service.validate(fields)


def _single_nth(args: argparse.Namespace) -> Optional[float]:
    if args.nth is None:
        return None
    values = parse_grid(args.nth, "nth")
    if len(values) != 1:
        raise ParameterError([{"code": "BadGrid", "field": "nth",
                               "message": "this command takes a single occupancy"}])
    return values[0]


# --- Commands ---

def _steady_state_rows(args, raw):
    base = _base_params(args, raw, _single_nth(args))
    phase = Phase(args.phase) if args.phase else None
    rows, failures = [], []
    for kappa in _kappa_grid(args, raw, "1.0"):
        for mu in _mu_grid(args, raw, "0"):
            params = base.with_point(mu, kappa)
            try:
                ss = meanfield_service.steady_state(params, phase=phase)
            except ToolkitError as e:
                failures.append({"code": e.code, "point": e.point or {"mu": mu, "kappa": kappa}})
                continue
            rows.append({"mu": mu, "kappa": kappa, "phase": ss.phase.value, "amp_signal": ss.amp_signal,
                         "amp_idler": ss.amp_idler, "pump_re": ss.pump_amp.real, "pump_im": ss.pump_amp.imag,
                         "delta": ss.delta, "mu_cr": ss.mu_cr})
    return base, rows, failures


def _phase_diagram_rows(args, raw):
    base = _base_params(args, raw, _single_nth(args))
    mu_grid = _mu_grid(args, raw, "0:2:201")
    kappa_grid = _kappa_grid(args, raw, "0.05:2:201")
    try:
        points = meanfield_service.phase_diagram(mu_grid, kappa_grid, base=base)
    except ValueError as e:
        raise model_service.grid_error(str(e)) from e
    rows = [{"mu": p.mu, "kappa": p.kappa, "phase": p.phase.value, "max_re_lambda": p.max_re_lambda} for p in points]
    failures = [{"code": p.error, "point": {"mu": p.mu, "kappa": p.kappa}} for p in points if p.error]
    return base, rows, failures


def _eigenflow_rows(args, raw):
    base = _base_params(args, raw, _single_nth(args))
    phases = [Phase(p.strip()) for p in args.phases.split(",") if p.strip()]
    rows, failures = [], []
    for kappa in _kappa_grid(args, raw, EIGENFLOW_PRESETS):
        result = linres_service.eigenflow_sweep(kappa, _mu_grid(args, raw, "0:2:401"), phases=phases, base=base)
        mu_ep = math.nan if result.mu_ep is None else result.mu_ep
        for point in result.points:
            if point.error == "OutOfRegime":
                continue
            if point.error:
                failures.append({"code": point.error, "point": {"mu": point.mu, "kappa": kappa,
                                                                 "phase": point.phase.value}})
                continue
            for index, lam in enumerate(point.eigenvalues):
                rows.append({"mu": point.mu, "kappa": kappa, "phase": point.phase.value, "index": index,
                             "re_lambda": lam.real, "im_lambda": lam.imag,
                             "mu_cr": result.mu_cr, "mu_ep": mu_ep})
    return base, rows, failures


def _variances_rows(args, raw):
    base = _base_params(args, raw, _single_nth(args))
    rows, failures = [], []
    for kappa in _kappa_grid(args, raw, "1.0"):
        for mu in _mu_grid(args, raw, "0.5"):
            try:
                report = spectra_service.variances_by_method(base.with_point(mu, kappa), args.method)
            except ToolkitError as e:
                failures.append({"code": e.code, "point": e.point or {"mu": mu, "kappa": kappa}})
                continue
            for label, q in report.quadratures.items():
                rows.append({"mu": mu, "kappa": kappa, "phase": report.phase.value, "quadrature": label,
                             "normalized": q.normalized, "absolute": q.absolute, "divergent": q.divergent})
            if report.squeezed_label == "mixed":
                rows.append({"mu": mu, "kappa": kappa, "phase": report.phase.value, "quadrature": "mixed",
                             "normalized": report.squeezed,
                             "absolute": report.squeezed * report.thermal_variance, "divergent": False})
    return base, rows, failures


def _negativity_rows(args, raw):
    base = _base_params(args, raw)
    n_th = parse_grid(args.nth, "nth") if args.nth is not None else [0.0]
    points = spectra_service.negativity_map(
        _mu_grid(args, raw, "0:2:201"), _kappa_grid(args, raw, NEGATIVITY_KAPPA), n_th=n_th,
        n_th_P=args.nth_pump if args.nth_pump is not None else raw.get("n_th_P"),
        markovian_comparator=args.markovian_comparator, base=base,
    )
    rows = [{"mu": p.mu, "kappa": p.kappa, "n_th": p.n_th, "e_n": p.e_n, "sigma_sq_abs": p.sigma_sq_abs}
            for p in points]
    failures = [{"code": p.error, "point": {"mu": p.mu, "kappa": p.kappa, "n_th": p.n_th}}
                for p in points if p.error]
    return base, rows, failures


def _simulate_rows(args, raw):
    base = _base_params(args, raw, _single_nth(args))
    try:
        config = SimConfig(dt=args.dt, t_burn=args.t_burn, t_sample=args.t_sample, n_traj=args.n_traj,
                           seed=args.seed, scheme=Scheme(args.scheme), record_every=args.record_every,
                           noise=args.noise, smoothing_window=args.window)
    except ValidationError as e:
        raise ParameterError(model_service.violations_from(e)) from e
    rows = []
    dumped = args.dump_trajectory is None
    for kappa in _kappa_grid(args, raw, "1.5,1.0,0.7,0.55"):
        for mu in _mu_grid(args, raw, "2"):
            trajs = sde_service.integrate_trajectories(base.with_point(mu, kappa), config)
            if not dumped:
                try:
                    sde_service.write_trajectory_csv(trajs[0], args.dump_trajectory)
                except OSError as e:
                    raise OutputError(f"Could not write {args.dump_trajectory}: {e}") from e
                dumped = True
            est = sde_service.estimate_order_parameters(trajs, window=args.window)
            rows.append({"kappa": kappa, "mu": mu, "amp_mean": est.amp_mean, "amp_se": est.amp_se,
                         "delta_est": est.delta_est, "delta_se": est.delta_se,
                         "var_phi_dot": est.var_phi_dot, "var_phi_dot_se": est.var_phi_dot_se})
    return base, rows, [], config


COMMANDS = {
    "steady-state": _steady_state_rows,
    "phase-diagram": _phase_diagram_rows,
    "eigenflow": _eigenflow_rows,
    "variances": _variances_rows,
    "negativity": _negativity_rows,
    "simulate": _simulate_rows,
}


def _report_error(error: ToolkitError) -> int:
    sys.stderr.write(json.dumps(export_service.to_plain(error.to_dict()), sort_keys=True) + "\n")
    return error.exit_code


def run(args: argparse.Namespace, argv: Sequence[str]) -> int:
    raw = _raw_params(args)
    result = COMMANDS[args.command](args, raw)
    base, rows, failures = result[:3]
    extra: Dict[str, Any] = {"argv": list(argv)}
    if len(result) > 3:
        extra["sim_config"] = result[3].model_dump(mode="json")
    metadata = export_service.metadata_header(args.command, base, seed=args.seed, extra=extra)
    frame = export_service.long_frame(rows, COLUMNS[args.command])
    export_service.write_dataset(frame, metadata, args.out, args.format)

    if failures:
        payload = {"error": "NumericalFailure", "failed_points": [
            {"code": f["code"], "point": f["point"]} for f in failures
        ]}
        sys.stderr.write(json.dumps(export_service.to_plain(payload), sort_keys=True) + "\n")
        logger.warning(f"command={args.command} failed_points={len(failures)}")
        return 3
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logger.info(f"cli command={args.command} argv={argv}")
    try:
        return run(args, argv)
    except ToolkitError as e:
        logger.error(f"cli command={args.command} error={e.code}: {e.message}")
        return _report_error(e)


if __name__ == "__main__":
    raise SystemExit(main())
