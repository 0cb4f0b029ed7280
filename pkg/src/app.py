from fastapi import FastAPI
import logging

from src.routers import geometry_router
from src.routers import scenario_router
from src.routers import spectral_router
from src.utils.settings import TOOL_VERSION, configure_logging

# Configure logging
configure_logging()
logger = logging.getLogger("app")

def create_app() -> FastAPI:
    """Create and configure FastAPI app"""
    app = FastAPI(
        title="MCF Arrival Lab API",
        description="Mean curvature flow, arrival-time and drift-Laplacian experiments",
        version=TOOL_VERSION
    )

    # Include routers
    app.include_router(scenario_router.router)
    app.include_router(geometry_router.router)
    app.include_router(spectral_router.router)

    @app.get("/")
    async def root():
        return {"message": "🚀 MCF Arrival Lab API is running!"}

    return app

app = create_app()

if __name__ == "__main__":
    import uvicorn
    uvicorn.run("src.app:app", host="0.0.0.0", port=8000, reload=True)
