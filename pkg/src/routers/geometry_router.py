# routers/geometry_router.py
import io
from typing import Optional

import numpy as np
from fastapi import APIRouter, File, Form, HTTPException, UploadFile

from src.models.schema import GeometryRequest, GeometryResponse
from src.services.geometry_core import Surface, fit_cylinder, gaussian_area, shrinker_residual
from src.utils.errors import LabError
from src.utils.io import read_surface_csv, to_jsonable

router = APIRouter(prefix="/geometry", tags=["geometry"])


def _analyze(surface: Surface, k: Optional[int]) -> GeometryResponse:
    area = gaussian_area(surface)
    curvature = surface.mean_curvatures
    fit = None
    if k is not None:
        try:
            fit = to_jsonable(fit_cylinder(surface, k).as_dict())
        except LabError as e:
            fit = {"error": str(e)}
    return GeometryResponse(
        success=True,
        n=surface.n,
        samples=surface.size,
        gaussian_area=area.value,
        tail_bound=area.tail_bound,
        max_mean_curvature=float(np.max(curvature)),
        min_mean_curvature=float(np.min(curvature)),
        shrinker_residual=shrinker_residual(surface).max_norm,
        cylinder_fit=fit,
    )


@router.post("/analyze", response_model=GeometryResponse)
def analyze(request: GeometryRequest):
    """Gaussian area, curvature range, shrinker residual and an optional cylinder fit."""
    if request.kind == "profile_of_revolution" and request.n is None:
        raise HTTPException(status_code=400, detail="Profiles need the surface dimension n")
    try:
        if request.kind == "plane_curve":
            surface = Surface(kind="plane_curve", ambient_dimension=2, samples=np.asarray(request.samples))
        else:
            surface = Surface(kind=request.kind, ambient_dimension=request.n + 1,
                              samples=np.asarray(request.samples), ends=request.ends, period=request.period)
        return _analyze(surface, request.k)
    except LabError as e:
        return GeometryResponse(success=False, error=f"Geometry analysis failed: {str(e)}")


@router.post("/analyze-csv", response_model=GeometryResponse)
async def analyze_csv(file: UploadFile = File(...), n: Optional[int] = Form(None),
                      ends: str = Form("capped"), k: Optional[int] = Form(None)):
    """Upload a surface CSV (`x0,x1` curve or `x,r` profile) and analyze it."""
    if not file.filename.endswith(".csv"):
        raise HTTPException(status_code=400, detail="File must be a CSV")
    content = await file.read()
    try:
        surface = read_surface_csv(io.BytesIO(content), n=n, ends=ends)
        return _analyze(surface, k)
    except LabError as e:
        return GeometryResponse(success=False, error=f"Geometry analysis failed: {str(e)}")
