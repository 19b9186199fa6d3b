"""Placement schedulers and the validator every schedule output goes through."""

from __future__ import annotations

from typing import Mapping, Protocol

from ..flowmodel import DataflowSpec, topological_order
from .resources import ResourceView, WorkerView


class Infeasible(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Scheduler(Protocol):
    def __call__(
        self, spec: DataflowSpec, view: ResourceView, current: Mapping[str, str] | None = None
    ) -> dict[str, str]: ...


def worker_order(workers: list[WorkerView], prefer_class: str | None = None) -> list[WorkerView]:
    """Edge and fog before cloud, then by id; a preferred class jumps the queue."""

    def key(w: WorkerView):
        return (prefer_class is not None and w.device_class != prefer_class, w.device_class == "cloud", w.id)

    return sorted(workers, key=key)


def first_fit(spec: DataflowSpec, view: ResourceView, current: Mapping[str, str] | None = None) -> dict[str, str]:
    prefer = spec.qos.get("prefer_class") or None
    workers = worker_order(view.available(), prefer)
    free = {w.id: [w.free_cpu, w.free_mem] for w in workers}
    by_id = {w.id: w for w in workers}
    mapping: dict[str, str] = {}

    for pid in topological_order(spec):
        p = spec.processor(pid)
        need = set(p.constraints)

        def fits(w: WorkerView) -> bool:
            cpu, mem = free[w.id]
            return need <= w.tags and p.demands.cpu_millis <= cpu and p.demands.mem_mb <= mem

        choice = None
        cur = by_id.get((current or {}).get(pid, ""))
        if cur is not None and fits(cur):
            choice = cur
            if prefer and cur.device_class != prefer:
                better = next((w for w in workers if w.device_class == prefer and fits(w)), None)
                choice = better or cur
        if choice is None:
            choice = next((w for w in workers if fits(w)), None)
        if choice is None:
            raise Infeasible(_reason(p, workers, free))
        free[choice.id][0] -= p.demands.cpu_millis
        free[choice.id][1] -= p.demands.mem_mb
        mapping[pid] = choice.id
    return mapping


def _reason(p, workers: list[WorkerView], free: dict) -> str:
    need = set(p.constraints)
    tagged = [w for w in workers if need <= w.tags]
    if not workers:
        return f"processor {p.id}: no available workers"
    if not tagged:
        return f"processor {p.id}: no worker satisfies constraint tags {sorted(need)}"
    best = max(free[w.id][0] for w in tagged)
    return (
        f"processor {p.id}: needs {p.demands.cpu_millis}m cpu / {p.demands.mem_mb}MB; "
        f"largest free cpu on a matching worker is {best}m"
    )


def validate_mapping(spec: DataflowSpec, view: ResourceView, mapping: Mapping[str, str]) -> list[str]:
    """Capacity, tag and totality violations of a mapping (empty list = sound)."""
    problems = []
    ids = set(spec.ids)
    if set(mapping) != ids:
        problems.append("mapping is not total over the dataflow")
    load: dict[str, list[int]] = {}
    for pid, wid in mapping.items():
        if pid not in ids:
            continue
        w = view.workers.get(wid)
        if w is None:
            problems.append(f"processor {pid} placed on unknown worker {wid}")
            continue
        if not w.available:
            problems.append(f"processor {pid} placed on unavailable worker {wid}")
        p = spec.processor(pid)
        missing = set(p.constraints) - w.tags
        if missing:
            problems.append(f"processor {pid} needs tags {sorted(missing)} that {wid} lacks")
        acc = load.setdefault(wid, [0, 0])
        acc[0] += p.demands.cpu_millis
        acc[1] += p.demands.mem_mb
    for wid, (cpu, mem) in load.items():
        w = view.workers[wid]
        if cpu > w.free_cpu or mem > w.free_mem:
            problems.append(f"worker {wid} over capacity: {cpu}m/{mem}MB placed, {w.free_cpu}m/{w.free_mem}MB free")
    return problems


SCHEDULERS: dict[str, Scheduler] = {"first_fit": first_fit}
