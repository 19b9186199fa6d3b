"""Remote-engine bridge: pushes batches to an external engine and emits what it returns."""

from __future__ import annotations

import time
from dataclasses import dataclass

from ..databatch import DataBatch
from ..engine.links import LinkSpec, PullFetcher, PushSender
from ..engine.queues import EdgeQueue
from .base import MICROBATCH, ProcessorConfigError, ProcessorLogic, register


@dataclass(frozen=True)
class BridgeSpec:
    endpoint: str
    ingress: str
    egress: str

    def __post_init__(self) -> None:
        if self.ingress == self.egress:
            raise ProcessorConfigError("bridge ingress and egress link ids must differ")

    @classmethod
    def from_config(cls, cfg: dict, default_prefix: str) -> "BridgeSpec":
        if "endpoint" not in cfg:
            raise ProcessorConfigError("bridge needs 'endpoint'")
        return cls(
            str(cfg["endpoint"]).rstrip("/"),
            str(cfg.get("ingress", f"{default_prefix}-in")),
            str(cfg.get("egress", f"{default_prefix}-out")),
        )


@register("bridge")
class BridgeProcessor(ProcessorLogic):
    input_models = (MICROBATCH,)
    output_models = (MICROBATCH,)
    CLOSE_TIMEOUT = 30.0

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.bridge = BridgeSpec.from_config(self.config, f"{ctx.dataflow}-{spec.id}")
        capacity = int(self.config.get("capacity", 1024))
        self.outbox = EdgeQueue(f"{spec.id}->remote", capacity)
        self.inbox = EdgeQueue(f"remote->{spec.id}", capacity)
        self.sender: PushSender | None = None
        self.fetcher: PullFetcher | None = None
        self.sent = 0
        self.returned = 0
        self._close_started: float | None = None

    def open(self) -> None:
        b = self.bridge
        out = LinkSpec(b.ingress, self.spec.id, "remote", "push", "producer", b.endpoint)
        back = LinkSpec(b.egress, "remote", self.spec.id, "pull", "consumer", b.endpoint)
        self.sender = PushSender(out, self.outbox, self.ctx.device)
        self.fetcher = PullFetcher(back, self.inbox, self.ctx.device)
        self.sender.start()
        self.fetcher.start()

    def on_item(self, batch: DataBatch, emit) -> None:
        # blocks while the outbox is full, so a down remote backs up into the input queue
        while not self.outbox.put(batch, timeout=0.5):
            pass
        self.sent += 1

    def poll(self, emit) -> float | None:
        while True:
            batch = self.inbox.get_nowait()
            if batch is None:
                break
            self.returned += 1
            emit(batch)
        return 0.05

    def on_close(self, emit) -> bool:
        self.poll(emit)
        if self._close_started is None:
            self._close_started = time.monotonic()
        if self.returned >= self.sent:
            return True
        return time.monotonic() - self._close_started > self.CLOSE_TIMEOUT

    def close(self) -> None:
        for t in (self.sender, self.fetcher):
            if t is not None:
                t.stop()

    def metrics(self) -> dict:
        out = {"sent": self.sent, "returned": self.returned, "outbox": self.outbox.depth}
        if self.sender is not None:
            out["link"] = self.sender.state()
        return out
