# routers/spectral_router.py
from fastapi import APIRouter, HTTPException

from src.models.schema import (
    DichotomyRequest,
    DichotomyResponse,
    FrequencyRequest,
    FrequencyResponse,
    KernelBasisResponse,
)
from src.services import drift_spectral as ds
from src.utils.errors import LabError
from src.utils.io import to_jsonable
from src.utils.polynomial import Polynomial

router = APIRouter(prefix="/spectral", tags=["spectral"])


@router.get("/kernel-basis", response_model=KernelBasisResponse)
async def kernel_basis(n: int = 2, k: int = 1):
    """Basis of ker(L + 1) on the shrinking cylinder with k axis directions."""
    try:
        basis = ds.kernel_basis(n, k)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return KernelBasisResponse(n=n, k=k, dimension=len(basis), elements=[b.as_dict() for b in basis])


@router.post("/frequency", response_model=FrequencyResponse)
def frequency(request: FrequencyRequest):
    """Frequency curve U(r) for |x|^d or a Hermite eigenfunction."""
    try:
        if request.function == "power":
            u, potential = ds.RadialFunction.power(request.degree, request.n), 0.0
        else:
            index = (list(request.multi_index) + [0] * request.n)[:request.n]
            u, potential = Polynomial.hermite_tensor(index, nvars=request.n), sum(index) / 2.0
        prob = ds.FrequencyProblem(n=request.n, u=u, potential=potential, r_max=max(request.radii) + 1.0)
        curve = ds.frequency_curve(prob, request.radii)
        return FrequencyResponse(success=True, rows=to_jsonable(curve.rows()))
    except LabError as e:
        return FrequencyResponse(success=False, error=f"Frequency evaluation failed: {str(e)}")


@router.post("/dichotomy", response_model=DichotomyResponse)
def dichotomy(request: DichotomyRequest):
    """Integrate the radial eigenfunction ODE and classify the growth of U."""
    try:
        result = ds.dichotomy_probe(request.lam, request.u0, request.du0, r0=request.r0, r_max=request.r_max,
                                    n=request.n, r1=request.r1, delta=request.delta, eps=request.eps)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return DichotomyResponse(success=True, verdict=result.verdict, summary=to_jsonable(result.as_dict()),
                             rows=to_jsonable(result.rows()))
