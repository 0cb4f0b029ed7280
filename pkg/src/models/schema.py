from pydantic import BaseModel, ConfigDict, Field
from typing import Any, Dict, List, Literal, Optional

# Pydantic models for scenario configuration
class GeometrySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: str = Field(..., description="Named builder: circle, ellipse, sphere, cylinder, dumbbell, perturbed_cylinder")
    params: Dict[str, Any] = Field(default_factory=dict, description="Builder keyword parameters")

class ToleranceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid_spacing: float = Field(1.0 / 64.0, gt=0)
    margin_cells: int = Field(4, ge=1)
    cfl_fraction: float = Field(0.9, gt=0, le=1)
    t_end: float = Field(6.0, gt=0)
    graph_radius: Optional[float] = Field(None, gt=0)
    k: Optional[int] = Field(None, ge=0)
    hessian_method: Literal["stencil", "lsq"] = "stencil"
    trace_rtol: float = Field(1e-10, gt=0)
    trace_samples: int = Field(400, ge=16)
    stop_factor: float = Field(10.0, gt=0)
    lines: int = Field(6, ge=1)
    start_fraction: float = Field(0.6, gt=0, lt=1)
    quadrature_radius: float = Field(12.0, gt=0)

class CheckSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    threshold: Optional[float] = None
    mode: Literal["pass", "measured"] = "pass"
    params: Dict[str, Any] = Field(default_factory=dict)


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    description: str = ""
    seed: int = 0
    geometry: Optional[GeometrySpec] = None
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    checks: List[CheckSpec] = Field(..., min_length=1)

# Pydantic models for reports
class CheckResult(BaseModel):
    name: str
    verdict: Literal["pass", "fail", "measured", "error"]
    value: Optional[float] = None
    threshold: Optional[float] = None
    measured: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None

class ScenarioReport(BaseModel):
    scenario: str
    seed: int
    grid_spacing: float
    tool: str
    version: str
    tolerance_scale: float = 1.0
    checks: List[CheckResult]
    passed: bool
    errors: int = 0

    @property
    def exit_code(self) -> int:
        if self.errors:
            return 3
        return 0 if self.passed else 1

# Pydantic models for the HTTP surface
class ScenarioRunRequest(BaseModel):
    bundled: Optional[str] = Field(None, description="Name of a bundled scenario")
    config: Optional[ScenarioConfig] = Field(None, description="Inline scenario configuration")
    seed: Optional[int] = None
    tolerance_scale: float = Field(1.0, gt=0)

class ScenarioRunResponse(BaseModel):
    success: bool
    report: Optional[ScenarioReport] = None
    output_dir: Optional[str] = None
    error: Optional[str] = None

class BundledScenariosResponse(BaseModel):
    scenarios: List[str]

class GeometryRequest(BaseModel):
    kind: Literal["plane_curve", "profile_of_revolution"] = "plane_curve"
    samples: List[List[float]] = Field(..., min_length=3)
    n: Optional[int] = Field(None, ge=1, description="Surface dimension for profiles")
    ends: Literal["capped", "periodic", "free"] = Field("capped", description="Profile ends; plane curves are always closed")
    period: float = 0.0
    k: Optional[int] = Field(None, ge=0, description="Fit a shrinking cylinder with k axis directions")

class GeometryResponse(BaseModel):
    success: bool
    n: Optional[int] = None
    samples: int = 0
    gaussian_area: Optional[float] = None
    tail_bound: Optional[float] = None
    max_mean_curvature: Optional[float] = None
    min_mean_curvature: Optional[float] = None
    shrinker_residual: Optional[float] = None
    cylinder_fit: Optional[Dict[str, Any]] = None
    error: Optional[str] = None

class KernelBasisResponse(BaseModel):
    n: int
    k: int
    dimension: int
    elements: List[Dict[str, Any]]

class FrequencyRequest(BaseModel):
    n: int = Field(2, ge=1)
    function: Literal["power", "hermite"] = "power"
    degree: float = Field(2.0, description="d for |x|^d")
    multi_index: List[int] = Field(default_factory=lambda: [2], description="Hermite multi-index (padded to n)")
    radii: List[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0])

class FrequencyResponse(BaseModel):
    success: bool
    rows: List[Dict[str, Optional[float]]] = Field(default_factory=list)
    error: Optional[str] = None

class DichotomyRequest(BaseModel):
    lam: float = 0.0
    u0: float = 1.0
    du0: float = 10.0
    r0: float = Field(1.0, gt=0)
    r_max: float = Field(20.0, gt=0)
    n: int = Field(2, ge=1)
    r1: float = 6.0
    delta: float = 0.5
    eps: float = 0.5

class DichotomyResponse(BaseModel):
    success: bool
    verdict: Optional[str] = None
    summary: Dict[str, Any] = Field(default_factory=dict)
    rows: List[Dict[str, Optional[float]]] = Field(default_factory=list)
    error: Optional[str] = None
