from __future__ import annotations

from typing import Callable

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import Caps
from .service import AgentError, DeviceService


class CapsModel(BaseModel):
    cpu_millis: int = Field(ge=0)
    mem_mb: int = Field(ge=0)


class SpawnRequest(BaseModel):
    caps: CapsModel
    profile: str | None = None


class SpawnResponse(BaseModel):
    worker_id: str
    endpoint: str


def create_app(service: DeviceService, on_shutdown: Callable[[], None] | None = None) -> FastAPI:
    app = FastAPI(title="echo device agent")

    @app.exception_handler(AgentError)
    async def agent_error(_request, exc: AgentError):
        return JSONResponse({"detail": str(exc)}, status_code=exc.status)

    @app.get("/health")
    def health():
        return {"status": "ok", "device": service.config.id}

    @app.get("/status")
    def status():
        return service.status()

    @app.post("/workers", status_code=201, response_model=SpawnResponse)
    def spawn(body: SpawnRequest):
        w = service.spawn_worker(Caps(body.caps.cpu_millis, body.caps.mem_mb), body.profile)
        return SpawnResponse(worker_id=w.worker_id, endpoint=w.endpoint)

    @app.delete("/workers/{wid}")
    def terminate(wid: str):
        service.terminate_worker(wid)
        return {"worker_id": wid, "terminated": True}

    @app.post("/shutdown")
    def shutdown():
        service.shutdown()
        if on_shutdown:
            on_shutdown()
        return {"status": "shutting down"}

    return app
