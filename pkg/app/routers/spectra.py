# app/routers/spectra.py
from typing import List

from fastapi import APIRouter

from app.core.errors import ToolkitError, to_http_exception
from app.services import model_service, spectra_service
from app.schemas.physics import VarianceReport
from app.schemas.requests import NegativityRequest, NegativityRow, VarianceRequest, finite_or_none

router = APIRouter(
    tags=["Spectra"],
)


@router.post("/variances", response_model=VarianceReport)
def get_variances(request: VarianceRequest):
    """(PUBLIC) Stationary quadrature variances at one point."""
    try:
        params = model_service.validate(request.params.raw())
        return spectra_service.variances_by_method(params, request.method)
    except ToolkitError as e:
        raise to_http_exception(e)


@router.post("/negativity", response_model=List[NegativityRow])
def get_negativity(request: NegativityRequest):
    """(PUBLIC) Logarithmic negativity over (n_th, kappa, mu); comparator rows carry kappa=null."""
    try:
        base = model_service.validate(request.params.raw())
        points = spectra_service.negativity_map(
            request.mu_grid, request.kappa_grid, n_th=request.n_th, n_th_P=request.n_th_P,
            markovian_comparator=request.markovian_comparator, base=base,
        )
    except ToolkitError as e:
        raise to_http_exception(e)
    return [
        NegativityRow(mu=p.mu, kappa=finite_or_none(p.kappa), n_th=p.n_th, e_n=finite_or_none(p.e_n),
                      sigma_sq_abs=finite_or_none(p.sigma_sq_abs), comparator=p.comparator, error=p.error)
        for p in points
    ]
