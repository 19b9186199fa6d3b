"""A minimal remote engine speaking the link wire protocol.

Batches pushed to an ingress link come back on its egress link, either
unchanged ("echo") or with every tuple value doubled ("double"). Egress for
ingress ``X-in`` is ``X-out`` unless a route says otherwise.
"""

from __future__ import annotations

import argparse
import threading

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from ..databatch import DataBatch, EventTuple, batch_to_stream, encode_tuples
from ..engine.links import DedupWindow
from ..engine.queues import EdgeQueue


class Envelope(BaseModel):
    batch_id: str
    attributes: dict[str, str]
    content_b64: str


class Ack(BaseModel):
    batch_ids: list[str]


def double_values(batch: DataBatch) -> DataBatch:
    if batch.count == 0:
        return batch
    doubled = [EventTuple(t.name, t.value * 2, t.unit, t.timestamp) for t in batch_to_stream(batch)]
    content, _ = encode_tuples(doubled)
    return DataBatch(dict(batch.attributes), content)


class EchoEngine:
    def __init__(self, mode: str = "echo", routes: dict[str, str] | None = None, capacity: int = 1024):
        if mode not in ("echo", "double"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.routes = dict(routes or {})
        self.capacity = capacity
        self.egress: dict[str, EdgeQueue] = {}
        self.dedup: dict[str, DedupWindow] = {}
        self.received = 0
        self._lock = threading.Lock()

    def egress_for(self, ingress: str) -> str:
        if ingress in self.routes:
            return self.routes[ingress]
        if ingress.endswith("-in"):
            return ingress[:-3] + "-out"
        return ingress + "-out"

    def _queue(self, link_id: str) -> EdgeQueue:
        with self._lock:
            q = self.egress.get(link_id)
            if q is None:
                q = self.egress[link_id] = EdgeQueue(link_id, self.capacity)
            return q

    def accept(self, ingress: str, batch: DataBatch) -> bool:
        with self._lock:
            window = self.dedup.setdefault(ingress, DedupWindow())
            if batch.id in window:
                return True
        out = double_values(batch) if self.mode == "double" else batch
        if not self._queue(self.egress_for(ingress)).put(out, timeout=1.0):
            raise HTTPException(503, "egress queue full")
        with self._lock:
            window.add(batch.id)
            self.received += 1
        return False

    def fetch(self, egress: str, max_n: int, wait_ms: int) -> list[DataBatch]:
        q = self._queue(egress)
        if wait_ms > 0:
            q.wait_nonempty(wait_ms / 1000.0)
        return q.peek(max_n)

    def ack(self, egress: str, ids: list[str]) -> int:
        return self._queue(egress).remove_ids(ids)


def create_app(echo: EchoEngine) -> FastAPI:
    app = FastAPI(title="echo stub engine")

    @app.get("/health")
    def health():
        return {"status": "ok", "mode": echo.mode, "received": echo.received}

    @app.post("/links/{link_id}/batches")
    def push(link_id: str, env: Envelope):
        dup = echo.accept(link_id, DataBatch.from_envelope(env.model_dump()))
        return {"accepted": True, "duplicate": True} if dup else {"accepted": True}

    @app.get("/links/{link_id}/batches")
    def pull(link_id: str, max: int = 32, wait_ms: int = 0):
        return {"batches": [b.to_envelope() for b in echo.fetch(link_id, max, min(wait_ms, 10_000))]}

    @app.post("/links/{link_id}/ack")
    def ack(link_id: str, body: Ack):
        return {"acked": echo.ack(link_id, body.batch_ids)}

    return app


def main(argv: list[str] | None = None) -> None:
    from ..common import parse_listen
    from ..serving import serve

    ap = argparse.ArgumentParser(prog="echoflow.stubs.echo_engine")
    ap.add_argument("--listen", default="127.0.0.1:8790")
    ap.add_argument("--mode", choices=("echo", "double"), default="echo")
    ap.add_argument("--route", action="append", default=[], metavar="INGRESS=EGRESS")
    args = ap.parse_args(argv)
    routes = dict(r.split("=", 1) for r in args.route)
    host, port = parse_listen(args.listen, 8790)
    serve(create_app(EchoEngine(args.mode, routes)), host, port)


if __name__ == "__main__":
    main()
