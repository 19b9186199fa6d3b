"""HTTP face of an engine: fragment control plus the link wire protocol."""

from __future__ import annotations

from typing import Callable
from urllib.parse import unquote

from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from ..databatch import BatchFormatError, DataBatch
from .fragment import Engine, FragmentDesc, FragmentError
from .links import DEVICE_HEADER, LinkBusy, PullServer, Receiver
from .processor import IllegalTransition


class EdgeModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    src: str = Field(alias="from")
    dst: str = Field(alias="to")


class LinkModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    link_id: str
    src: str = Field(alias="from")
    dst: str = Field(alias="to")
    direction: str = Field(pattern="^(push|pull)$")
    role: str = Field(pattern="^(producer|consumer)$")
    peer_url: str = ""
    peer_device: str = ""


class FragmentModel(BaseModel):
    fragment_id: str | None = None
    dataflow: str
    processors: list[dict]
    internal_edges: list[EdgeModel] = []
    links: list[LinkModel] = []
    paused: list[str] = []
    reset_edges: list[str] = []
    restore: dict[str, dict] = {}
    capacity: int = Field(default=1024, ge=1)

    def to_desc(self) -> FragmentDesc:
        return FragmentDesc.from_json(self.model_dump(by_alias=True))


class Envelope(BaseModel):
    batch_id: str
    attributes: dict[str, str]
    content_b64: str


class EnvelopeList(BaseModel):
    batches: list[Envelope]


class AckRequest(BaseModel):
    batch_ids: list[str]


class ProcessorList(BaseModel):
    processors: list[str]


class FragmentAck(BaseModel):
    fragment_id: str
    state: str


def _batch(env: Envelope) -> DataBatch:
    try:
        return DataBatch.from_envelope(env.model_dump())
    except (BatchFormatError, ValueError) as exc:
        raise HTTPException(400, f"bad batch envelope: {exc}") from None


def create_app(
    engine: Engine,
    reachable_from: list[str] | None = None,
    on_shutdown: Callable[[], None] | None = None,
) -> FastAPI:
    app = FastAPI(title="echo engine")
    allowed = set(reachable_from or ["*"])

    @app.middleware("http")
    async def firewall(request: Request, call_next):
        # simulated network policy: only the data plane is gated
        if request.url.path.startswith("/links/") and "*" not in allowed:
            peer = request.headers.get(DEVICE_HEADER)
            if peer and peer != engine.device and peer not in allowed:
                return JSONResponse({"detail": f"connection from {peer} blocked"}, status_code=403)
        return await call_next(request)

    @app.exception_handler(FragmentError)
    async def fragment_error(_request, exc: FragmentError):
        return JSONResponse({"detail": str(exc)}, status_code=exc.status)

    @app.exception_handler(IllegalTransition)
    async def illegal(_request, exc: IllegalTransition):
        return JSONResponse({"detail": str(exc), "state": exc.state}, status_code=409)

    @app.get("/health")
    def health():
        return {"status": "ok", "worker_id": engine.worker_id, "device": engine.device}

    @app.get("/status")
    def status():
        return engine.status()

    # fragment control -------------------------------------------------------------

    @app.get("/fragments")
    def list_fragments():
        return {"fragments": sorted(engine.fragments)}

    @app.post("/fragments", status_code=201, response_model=FragmentAck)
    def deploy(body: FragmentModel, start: bool = False):
        frag = engine.deploy(body.to_desc())
        if start:
            frag.start()
        return FragmentAck(fragment_id=frag.id, state="running" if frag.started else "deployed")

    @app.put("/fragments/{fid}", response_model=FragmentAck)
    def upsert(fid: str, body: FragmentModel):
        desc = body.to_desc()
        if desc.fragment_id != fid:
            raise HTTPException(400, "fragment id in path and body differ")
        frag = engine.upsert(desc)
        return FragmentAck(fragment_id=frag.id, state="running" if frag.started else "deployed")

    @app.get("/fragments/{fid}")
    def fragment_status(fid: str):
        return engine.fragment(fid).status()

    @app.post("/fragments/{fid}/start", response_model=FragmentAck)
    def start(fid: str):
        frag = engine.fragment(fid)
        frag.start()
        return FragmentAck(fragment_id=fid, state="running")

    @app.post("/fragments/{fid}/undeploy")
    def undeploy(fid: str):
        return {"fragment_id": fid, "queued": engine.undeploy(fid)}

    @app.post("/fragments/{fid}/processors/{pid}/pause")
    def pause_one(fid: str, pid: str):
        return {"states": engine.fragment(fid).pause([pid])}

    @app.post("/fragments/{fid}/processors/{pid}/resume")
    def resume_one(fid: str, pid: str):
        return {"states": engine.fragment(fid).resume([pid])}

    @app.post("/fragments/{fid}/pause")
    def pause_many(fid: str, body: ProcessorList):
        return {"states": engine.fragment(fid).pause(body.processors)}

    @app.post("/fragments/{fid}/resume")
    def resume_many(fid: str, body: ProcessorList):
        return {"states": engine.fragment(fid).resume(body.processors)}

    @app.get("/fragments/{fid}/processors/{pid}/state")
    def processor_state(fid: str, pid: str):
        return engine.fragment(fid).processor_state(pid)

    @app.get("/fragments/{fid}/queues")
    def queues(fid: str, content: bool = False, edges: str | None = None):
        wanted = set(unquote(edges).split(",")) if edges else None
        return engine.fragment(fid).inventory(content=content, edges=wanted)

    @app.post("/fragments/{fid}/queues/{edge}/inject")
    def inject(fid: str, edge: str, body: EnvelopeList):
        n = engine.fragment(fid).inject(unquote(edge), [_batch(e) for e in body.batches])
        return {"injected": n}

    @app.post("/fragments/{fid}/links/{link_id}/freeze")
    def freeze(fid: str, link_id: str):
        return {"frozen": engine.fragment(fid).freeze_link(link_id)}

    @app.post("/shutdown")
    def shutdown():
        engine.shutdown()
        if on_shutdown:
            on_shutdown()
        return {"status": "shutting down"}

    # link wire protocol -------------------------------------------------------------

    def _endpoint(link_id: str, kind):
        ep = engine.link_endpoint(link_id)
        if not isinstance(ep, kind):
            raise HTTPException(404, f"no {kind.__name__.lower()} for link {link_id}")
        return ep

    @app.post("/links/{link_id}/batches")
    def receive(link_id: str, env: Envelope = Body(...)):
        rx = _endpoint(link_id, Receiver)
        try:
            dup = rx.accept(_batch(env))
        except LinkBusy:
            raise HTTPException(503, "receiver queue full") from None
        return {"accepted": True, "duplicate": True} if dup else {"accepted": True}

    @app.get("/links/{link_id}/batches")
    def serve_batches(link_id: str, max: int = 32, wait_ms: int = 0):
        srv = _endpoint(link_id, PullServer)
        batches = srv.fetch(max_n=max, wait_ms=min(wait_ms, 10_000))
        return {"batches": [b.to_envelope() for b in batches]}

    @app.post("/links/{link_id}/ack")
    def ack(link_id: str, body: AckRequest):
        srv = _endpoint(link_id, PullServer)
        return {"acked": srv.ack(body.batch_ids)}

    return app
