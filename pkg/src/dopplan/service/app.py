"""FastAPI wrapper around the planning toolkit."""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from . import handlers, schemas
from .handlers import ServiceInputError


def create_app() -> FastAPI:
    app = FastAPI(title="dopplan service", version=__version__)

    @app.exception_handler(ServiceInputError)
    async def _input_error(request, exc: ServiceInputError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return handlers.handle_health()

    @app.post("/calibrate", response_model=schemas.CalibrateResponse)
    def calibrate(req: schemas.CalibrateRequest):
        return handlers.handle_calibrate(req)

    @app.post("/plan", response_model=schemas.PlanResponse)
    def plan(req: schemas.PlanRequest):
        return handlers.handle_plan(req)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        return handlers.handle_simulate(req)

    @app.post("/frontier", response_model=schemas.FrontierResponse)
    def frontier(req: schemas.FrontierRequest):
        return handlers.handle_frontier(req)

    @app.post("/ingest", response_model=schemas.IngestResponse)
    def ingest(req: schemas.IngestRequest):
        return handlers.handle_ingest(req)

    @app.post("/advise", response_model=schemas.AdviseResponse)
    def advise(req: schemas.AdviseRequest):
        return handlers.handle_advise(req)

    return app


app = create_app()
