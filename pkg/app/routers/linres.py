# app/routers/linres.py
from fastapi import APIRouter

from app.core.errors import ToolkitError, to_http_exception
from app.services import linres_service, meanfield_service, model_service
from app.schemas.requests import (
    ComplexValue,
    EigenflowRequest,
    EigenflowResponse,
    EigenflowRow,
    EigenspectrumResponse,
    PointRequest,
)

router = APIRouter(
    tags=["Linear Response"],
)


@router.post("/eigenspectrum", response_model=EigenspectrumResponse)
def get_eigenspectrum(request: PointRequest):
    """(PUBLIC) Eigenvalues of the memory-embedded linearized generator."""
    try:
        params = model_service.validate(request.params.raw())
        ss = meanfield_service.steady_state(params, phase=request.phase)
        m = linres_service.build_embedded_matrix(params, ss)
        spectrum = linres_service.eigenspectrum(m)
    except ToolkitError as e:
        raise to_http_exception(e)
    return EigenspectrumResponse(
        phase=ss.phase, frame=m.frame.value, labels=m.labels,
        eigenvalues=[ComplexValue.of(complex(w)) for w in spectrum.eigenvalues],
        max_re=spectrum.max_re, stable=spectrum.stable,
    )


@router.post("/eigenflow", response_model=EigenflowResponse)
def get_eigenflow(request: EigenflowRequest):
    """(PUBLIC) Eigenvalue flow along mu at fixed kappa for each branch."""
    try:
        base = model_service.validate(request.params.raw())
        result = linres_service.eigenflow_sweep(request.kappa, request.mu_grid, phases=request.phases, base=base)
    except ToolkitError as e:
        raise to_http_exception(e)
    return EigenflowResponse(
        kappa=result.kappa, mu_cr=result.mu_cr, mu_ep=result.mu_ep,
        points=[
            EigenflowRow(mu=p.mu, phase=p.phase, eigenvalues=[ComplexValue.of(w) for w in p.eigenvalues],
                         error=p.error)
            for p in result.points
        ],
    )
