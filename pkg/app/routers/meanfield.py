# app/routers/meanfield.py
from typing import List

from fastapi import APIRouter

from app.core.errors import ToolkitError, to_http_exception
from app.services import meanfield_service, model_service
from app.schemas.requests import (
    ComplexValue,
    PhaseDiagramRequest,
    PhaseDiagramRow,
    PointRequest,
    SteadyStateResponse,
    finite_or_none,
)

router = APIRouter(
    tags=["Mean Field"],
)


@router.post("/steady-state", response_model=SteadyStateResponse)
def get_steady_state(request: PointRequest):
    """(PUBLIC) Mean-field steady state, stable branch unless a phase is requested."""
    try:
        params = model_service.validate(request.params.raw())
        ss = meanfield_service.steady_state(params, phase=request.phase)
    except ToolkitError as e:
        raise to_http_exception(e)
    return SteadyStateResponse(
        phase=ss.phase, amp_signal=ss.amp_signal, amp_idler=ss.amp_idler,
        pump_amp=ComplexValue.of(ss.pump_amp), delta=ss.delta, signed_delta=ss.signed_delta,
        mu=ss.mu, kappa=finite_or_none(ss.kappa), mu_cr=ss.mu_cr,
    )


@router.post("/phase-diagram", response_model=List[PhaseDiagramRow])
def get_phase_diagram(request: PhaseDiagramRequest):
    """(PUBLIC) Stable phase and relaxation bound on a (mu, kappa) grid, kappa-major."""
    try:
        base = model_service.validate(request.params.raw())
        points = meanfield_service.phase_diagram(request.mu_grid, request.kappa_grid, base=base)
    except ToolkitError as e:
        raise to_http_exception(e)
    except ValueError as e:
        raise to_http_exception(model_service.grid_error(str(e)))
    return [
        PhaseDiagramRow(mu=p.mu, kappa=p.kappa, phase=p.phase,
                        max_re_lambda=finite_or_none(p.max_re_lambda), error=p.error)
        for p in points
    ]
