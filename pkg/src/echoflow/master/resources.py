"""ResourceView: what the scheduler and deployer know about workers, read from the catalog."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..catalog import CatalogClient, CatalogItem
from ..flowmodel import DataflowSpec, from_json

ACTIVE_STATES = ("scheduling", "deploying", "running", "rebalancing", "stopping")


@dataclass
class WorkerView:
    id: str
    device: str
    device_class: str
    cpu_millis: int
    mem_mb: int
    tags: frozenset[str] = frozenset()
    endpoint: str = ""
    reachable_from: tuple[str, ...] = ("*",)
    available: bool = True
    used_cpu: int = 0
    used_mem: int = 0

    @property
    def free_cpu(self) -> int:
        return self.cpu_millis - self.used_cpu

    @property
    def free_mem(self) -> int:
        return self.mem_mb - self.used_mem

    @classmethod
    def from_item(cls, item: CatalogItem) -> "WorkerView":
        d = item.as_dict()
        wid = item.href.split("/")[2]
        tags = json.loads(d.get("tags", "[]"))
        return cls(
            id=wid,
            device=d.get("device", wid),
            device_class=d.get("class", "edge"),
            cpu_millis=int(d.get("cpuMillis", "0")),
            mem_mb=int(d.get("memMb", "0")),
            tags=frozenset(tags) | {d.get("class", "edge")},
            endpoint=d.get("endpoint", ""),
            reachable_from=tuple(json.loads(d.get("reachableFrom", '["*"]'))),
            available=not item.stale and d.get("state", "up") == "up",
        )


@dataclass
class ResourceView:
    workers: dict[str, WorkerView] = field(default_factory=dict)

    def available(self) -> list[WorkerView]:
        return [w for w in self.workers.values() if w.available]

    def can_connect(self, src: str, dst: str) -> bool:
        """May worker ``src`` open a connection to worker ``dst``?"""
        if src == dst:
            return True
        a, b = self.workers.get(src), self.workers.get(dst)
        if a is None or b is None:
            return True
        if a.device == b.device:
            return True
        return "*" in b.reachable_from or a.device in b.reachable_from

    def endpoint(self, wid: str) -> str:
        w = self.workers.get(wid)
        if w is None or not w.endpoint:
            raise KeyError(f"no endpoint known for worker {wid}")
        return w.endpoint

    @classmethod
    def build(cls, workers: Iterable[WorkerView], placed: Iterable[tuple[DataflowSpec, Mapping[str, str]]] = ()) -> "ResourceView":
        view = cls({w.id: w for w in workers})
        for spec, mapping in placed:
            for p in spec.processors:
                w = view.workers.get(mapping.get(p.id, ""))
                if w is not None:
                    w.used_cpu += p.demands.cpu_millis
                    w.used_mem += p.demands.mem_mb
        return view


def load_view(catalog: CatalogClient, exclude_dataflow: str | None = None) -> ResourceView:
    """Workers from the catalog, minus the demands already placed by other live dataflows."""
    workers = [WorkerView.from_item(i) for i in catalog.query("/worker/") if i.href.count("/") == 2]
    placed = []
    for item in catalog.query("/dataflow/"):
        if item.href.count("/") != 2:
            continue
        uuid = item.href.split("/")[2]
        if uuid == exclude_dataflow or item.get("state") not in ACTIVE_STATES:
            continue
        try:
            spec = from_json(json.loads(item.get("spec", "{}")))
            mapping = json.loads(item.get("mapping", "{}"))
        except ValueError:
            continue
        placed.append((spec, mapping))
    return ResourceView.build(workers, placed)
