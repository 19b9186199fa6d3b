from __future__ import annotations

from typing import Any

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .manager import ApiError, AppManager


class SubmitResponse(BaseModel):
    uuid: str
    state: str


class StopResponse(BaseModel):
    uuid: str
    state: str
    warnings: list[str]


class RebalanceResponse(BaseModel):
    uuid: str
    mapping: dict[str, str]
    moved: list[str]
    noop: bool


class DataflowSummary(BaseModel):
    uuid: str
    name: str | None
    state: str | None


class DataflowDetail(BaseModel):
    uuid: str
    name: str
    state: str
    spec: dict[str, Any]
    mapping: dict[str, str]
    plan: dict[str, Any]
    timestamps: dict[str, str]
    warnings: list[str]
    metrics: dict[str, Any]


def create_app(manager: AppManager) -> FastAPI:
    app = FastAPI(title="echo master")

    @app.exception_handler(ApiError)
    async def api_error(_request, exc: ApiError):
        return JSONResponse({"detail": exc.detail}, status_code=exc.status)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/dataflows", status_code=201, response_model=SubmitResponse)
    async def submit(request: Request):
        # raw body so malformed JSON reaches the validator and yields a 400 with violations
        body = await request.body()
        uuid = await run_in_threadpool(manager.start, body)
        return SubmitResponse(uuid=uuid, state="running")

    @app.get("/dataflows", response_model=list[DataflowSummary])
    def listing():
        return manager.list()

    @app.get("/dataflows/{uuid}", response_model=DataflowDetail)
    def describe(uuid: str):
        return manager.describe(uuid)

    @app.delete("/dataflows/{uuid}", response_model=StopResponse)
    def stop(uuid: str):
        rec = manager.stop(uuid)
        return StopResponse(uuid=uuid, state=rec.state, warnings=rec.warnings)

    @app.post("/dataflows/{uuid}/rebalance", response_model=RebalanceResponse)
    def rebalance(uuid: str):
        return manager.rebalance(uuid)

    return app
