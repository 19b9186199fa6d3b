"""Remote links carrying batches across cut edges (push and pull modes).

Transport is at-least-once; receivers drop repeats by batch id over a
sliding window, which makes each link effectively-once.
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass

import httpx

from ..databatch import DataBatch
from .queues import EdgeQueue

log = logging.getLogger(__name__)

DEDUP_WINDOW = 4096
BACKOFF_BASE = 0.2
BACKOFF_CAP = 5.0
DEGRADE_AFTER = 6
DEVICE_HEADER = "X-Echo-Device"


class LinkBusy(Exception):
    """Receiver queue full; the sender should retry later."""


class DedupWindow:
    def __init__(self, size: int = DEDUP_WINDOW):
        self.size = size
        self._order: deque[str] = deque()
        self._seen: set[str] = set()

    def __contains__(self, batch_id: str) -> bool:
        return batch_id in self._seen

    def add(self, batch_id: str) -> None:
        if batch_id in self._seen:
            return
        self._order.append(batch_id)
        self._seen.add(batch_id)
        while len(self._order) > self.size:
            self._seen.discard(self._order.popleft())


@dataclass
class LinkSpec:
    link_id: str
    src: str
    dst: str
    direction: str  # push | pull
    role: str  # producer | consumer
    peer_url: str = ""
    peer_device: str = ""

    @property
    def edge(self) -> str:
        return f"{self.src}->{self.dst}"

    def to_json(self) -> dict:
        return {
            "link_id": self.link_id,
            "from": self.src,
            "to": self.dst,
            "direction": self.direction,
            "role": self.role,
            "peer_url": self.peer_url,
            "peer_device": self.peer_device,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LinkSpec":
        return cls(
            d["link_id"], d["from"], d["to"], d["direction"], d["role"], d.get("peer_url", ""), d.get("peer_device", "")
        )


class Backoff:
    def __init__(self, base: float = BACKOFF_BASE, cap: float = BACKOFF_CAP):
        self.base, self.cap = base, cap
        self.failures = 0

    def next_delay(self) -> float:
        delay = min(self.cap, self.base * (2 ** self.failures))
        self.failures += 1
        return delay

    def reset(self) -> None:
        self.failures = 0


class Receiver:
    """Consumer end of a push link: accepts POSTed batches into an edge queue."""

    def __init__(self, spec: LinkSpec, queue: EdgeQueue):
        self.spec = spec
        self.queue = queue
        self.dedup = DedupWindow()
        self.received = 0
        self.duplicates = 0
        self._lock = threading.Lock()

    def accept(self, batch: DataBatch, timeout: float = 1.0) -> bool:
        """Returns True when the batch was a duplicate."""
        with self._lock:
            if batch.id in self.dedup:
                self.duplicates += 1
                return True
            if not self.queue.put(batch, timeout=timeout):
                raise LinkBusy(self.spec.link_id)
            self.dedup.add(batch.id)
            self.received += 1
            return False

    def state(self) -> dict:
        return {"role": "consumer", "direction": "push", "received": self.received, "duplicates": self.duplicates}


class _LinkThread(threading.Thread):
    def __init__(self, spec: LinkSpec, device: str, name: str):
        super().__init__(daemon=True, name=name)
        self.spec = spec
        self.halt = threading.Event()
        self.backoff = Backoff()
        self.degraded = False
        self.delivered = 0
        self.failures = 0
        self.last_error = ""
        self._http = httpx.Client(base_url=spec.peer_url, timeout=5.0, headers={DEVICE_HEADER: device})

    def _failed(self, err: str) -> None:
        self.failures += 1
        self.last_error = err
        if self.backoff.failures >= DEGRADE_AFTER and not self.degraded:
            self.degraded = True
            log.warning("link %s degraded: %s", self.spec.link_id, err)
        self.halt.wait(self.backoff.next_delay())

    def _ok(self) -> None:
        if self.degraded:
            log.info("link %s recovered", self.spec.link_id)
        self.degraded = False
        self.backoff.reset()

    def stop(self) -> None:
        self.halt.set()
        if self.is_alive() and threading.current_thread() is not self:
            self.join(timeout=10)
        self._http.close()

    def state(self) -> dict:
        return {
            "role": self.spec.role,
            "direction": self.spec.direction,
            "peer": self.spec.peer_url,
            "delivered": self.delivered,
            "failures": self.failures,
            "degraded": self.degraded,
            "last_error": self.last_error,
        }


class PushSender(_LinkThread):
    """Producer end of a push link: drains an outbox to the consumer engine.

    The head batch stays in the outbox until acknowledged, so a retry always
    resends the same batch id.
    """

    def __init__(self, spec: LinkSpec, outbox: EdgeQueue, device: str):
        super().__init__(spec, device, f"push-{spec.link_id}")
        self.outbox = outbox

    def run(self) -> None:
        url = f"/links/{self.spec.link_id}/batches"
        while not self.halt.is_set():
            if not self.outbox.wait_nonempty(0.2):
                continue
            head = self.outbox.peek(1)
            if not head:
                continue
            batch = head[0]
            try:
                resp = self._http.post(url, json=batch.to_envelope())
            except httpx.HTTPError as exc:
                self._failed(f"{type(exc).__name__}: {exc}")
                continue
            if resp.status_code == 200:
                self.outbox.remove_ids([batch.id])
                self.delivered += 1
                self._ok()
            elif resp.status_code == 503:
                self.halt.wait(0.05)
            else:
                self._failed(f"HTTP {resp.status_code}: {resp.text[:200]}")


class PullServer:
    """Producer end of a pull link: the outbox is served to the consumer on request."""

    def __init__(self, spec: LinkSpec, outbox: EdgeQueue):
        self.spec = spec
        self.outbox = outbox
        self.served = 0
        self.acked = 0

    def fetch(self, max_n: int, wait_ms: int) -> list[DataBatch]:
        if wait_ms > 0:
            self.outbox.wait_nonempty(wait_ms / 1000.0)
        batches = self.outbox.peek(max_n)
        self.served += len(batches)
        return batches

    def ack(self, ids: list[str]) -> int:
        n = self.outbox.remove_ids(ids)
        self.acked += n
        return n

    def state(self) -> dict:
        return {"role": "producer", "direction": "pull", "served": self.served, "acked": self.acked}


class PullFetcher(_LinkThread):
    """Consumer end of a pull link: long-polls the producer and acks receipt."""

    def __init__(self, spec: LinkSpec, queue: EdgeQueue, device: str, max_n: int = 32, wait_ms: int = 500):
        super().__init__(spec, device, f"pull-{spec.link_id}")
        self.queue = queue
        self.max_n = max_n
        self.wait_ms = wait_ms
        self.dedup = DedupWindow()
        self.duplicates = 0

    def run(self) -> None:
        base = f"/links/{self.spec.link_id}"
        while not self.halt.is_set():
            try:
                resp = self._http.get(
                    f"{base}/batches",
                    params={"max": self.max_n, "wait_ms": self.wait_ms},
                    timeout=5.0 + self.wait_ms / 1000.0,
                )
            except httpx.HTTPError as exc:
                self._failed(f"{type(exc).__name__}: {exc}")
                continue
            if resp.status_code != 200:
                self._failed(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            self._ok()
            received = []
            for env in resp.json().get("batches", []):
                batch = DataBatch.from_envelope(env)
                if batch.id in self.dedup:
                    self.duplicates += 1
                    received.append(batch.id)
                    continue
                if not self.queue.put(batch, stop=self.halt):
                    break
                self.dedup.add(batch.id)
                self.delivered += 1
                received.append(batch.id)
            if not received:
                continue
            try:
                self._http.post(f"{base}/ack", json={"batch_ids": received})
            except httpx.HTTPError as exc:
                # unacked batches are served again and dropped by the dedup window
                self._failed(f"ack failed: {exc}")

    def state(self) -> dict:
        out = super().state()
        out["duplicates"] = self.duplicates
        return out
