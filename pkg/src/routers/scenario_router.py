# routers/scenario_router.py
from fastapi import APIRouter, HTTPException

from src.models.schema import BundledScenariosResponse, ScenarioRunRequest, ScenarioRunResponse
from src.services.scenario_runner import bundled_path, list_bundled, load_config, run_scenario
from src.utils.errors import ConfigError, LabError
from src.utils.settings import default_output_root

router = APIRouter(prefix="/scenario", tags=["scenario"])


@router.get("/bundled", response_model=BundledScenariosResponse)
async def bundled_scenarios():
    """List the scenario configurations shipped with the lab."""
    return BundledScenariosResponse(scenarios=list_bundled())


@router.post("/run", response_model=ScenarioRunResponse)
def run(request: ScenarioRunRequest):
    """Run a bundled or inline scenario and return its report."""
    if (request.bundled is None) == (request.config is None):
        raise HTTPException(status_code=400, detail="Give exactly one of 'bundled' or 'config'")
    try:
        config = load_config(bundled_path(request.bundled)) if request.bundled else load_config(
            request.config.model_dump(exclude_none=True))
    except ConfigError as e:
        raise HTTPException(status_code=400, detail=f"Invalid scenario ({e.key}): {str(e)}")

    out_dir = default_output_root() / "api" / config.name
    try:
        report = run_scenario(config, out_dir, seed=request.seed, tolerance_scale=request.tolerance_scale)
        return ScenarioRunResponse(success=report.exit_code == 0, report=report, output_dir=str(out_dir))
    except LabError as e:
        return ScenarioRunResponse(success=False, output_dir=str(out_dir), error=f"Scenario failed: {str(e)}")
