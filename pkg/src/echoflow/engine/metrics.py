"""Periodic metrics: per-processor rates, queue depths, link states, worker CPU/memory."""

from __future__ import annotations

import logging
import threading
import time
from collections import deque

import psutil

from ..catalog import CatalogClient, CatalogUnavailable, make_item
from .fragment import Engine

log = logging.getLogger(__name__)

BUFFER_SAMPLES = 100


class RateTracker:
    """Turns monotonic counters into per-second rates between two samples."""

    def __init__(self) -> None:
        self._last: dict[str, tuple[float, dict]] = {}

    def rates(self, key: str, counters: dict, now: float) -> dict:
        prev = self._last.get(key)
        self._last[key] = (now, dict(counters))
        if prev is None or now <= prev[0]:
            return {f"{k}_per_s": 0.0 for k in counters}
        dt = now - prev[0]
        return {f"{k}_per_s": round(max(0, v - prev[1].get(k, 0)) / dt, 3) for k, v in counters.items()}


def collect(engine: Engine, tracker: RateTracker, proc: psutil.Process | None = None) -> list:
    """One sample: the catalog items describing this worker right now."""
    now = time.monotonic()
    status = engine.status()
    proc = proc or psutil.Process()
    with proc.oneshot():
        cpu_pct = proc.cpu_percent(None)
        rss_mb = proc.memory_info().rss / 2**20
    # CPU% relative to the worker's allotted share of a core
    share = max(engine.cpu_millis, 1) / 1000.0
    worker_doc = {
        "cpu_pct": round(cpu_pct / share, 2),
        "mem_pct": round(100.0 * rss_mb / max(engine.mem_mb, 1), 2),
        "mem_mb": round(rss_mb, 1),
        "fragments": sorted(status["fragments"]),
    }
    items = [
        make_item(
            f"/worker/{engine.worker_id}/metrics",
            {
                "cpuPct": str(worker_doc["cpu_pct"]),
                "memPct": str(worker_doc["mem_pct"]),
                "metrics": worker_doc,
            },
        )
    ]
    for fid, frag in status["fragments"].items():
        procs = {}
        for pid, p in frag["processors"].items():
            c = p["counters"]
            rates = tracker.rates(f"{fid}/{pid}", {"batches_in": c["in"], "tuples_in": c["tuples_in"],
                                                   "batches_out": c["out"], "tuples_out": c["tuples_out"]}, now)
            procs[pid] = {"state": p["state"], "counters": c, **rates, "extra": p["extra"]}
        doc = {
            "worker": engine.worker_id,
            "processors": procs,
            "queues": frag["queues"],
            "links": frag["links"],
            "cpu_pct": worker_doc["cpu_pct"],
            "mem_pct": worker_doc["mem_pct"],
        }
        items.append(make_item(f"/dataflow/{frag['dataflow']}/metrics/{engine.worker_id}", {"metrics": doc}))
    return items


class MetricsReporter(threading.Thread):
    """Writes samples to the catalog; keeps the newest samples while it is unreachable."""

    def __init__(self, engine: Engine, catalog_url: str, interval_s: float = 5.0):
        super().__init__(daemon=True, name="metrics")
        self.engine = engine
        self.client = CatalogClient(catalog_url) if catalog_url else None
        self.interval = interval_s
        self.buffer: deque[list] = deque(maxlen=BUFFER_SAMPLES)
        self.tracker = RateTracker()
        self.halt = threading.Event()
        self.sent = 0
        self._proc = psutil.Process()
        self._proc.cpu_percent(None)

    def report_once(self) -> bool:
        self.buffer.append(collect(self.engine, self.tracker, self._proc))
        if self.client is None:
            return False
        while self.buffer:
            try:
                for item in self.buffer[0]:
                    self.client.register(item)
            except CatalogUnavailable as exc:
                log.debug("catalog unreachable, %d samples buffered: %s", len(self.buffer), exc)
                return False
            self.buffer.popleft()
            self.sent += 1
        return True

    def run(self) -> None:
        while not self.halt.wait(self.interval):
            try:
                self.report_once()
            except Exception as exc:  # never let reporting kill the engine
                log.warning("metrics sample failed: %s", exc)

    def stop(self) -> None:
        self.halt.set()
