"""Enacts placements on worker engines: deploy, undeploy and live migration."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Mapping

from ..flowmodel import (
    DataflowSpec,
    FragmentEntry,
    FragmentPlan,
    affected_edges,
    graph_diff,
    split_edge_key,
    topological_order,
)
from .engine_client import EngineClient, EngineError
from .resources import ResourceView

log = logging.getLogger(__name__)


class DeployFailed(RuntimeError):
    def __init__(self, worker: str, message: str):
        super().__init__(message)
        self.worker = worker


class MigrationFailed(RuntimeError):
    def __init__(self, message: str, warnings: list[str]):
        super().__init__(message)
        self.warnings = warnings


def fragment_desc(
    uuid: str,
    spec: DataflowSpec,
    entry: FragmentEntry,
    view: ResourceView,
    paused: Iterable[str] = (),
    reset: Iterable[str] = (),
    restore: Mapping[str, dict] | None = None,
) -> dict:
    links = []
    for c in entry.cut_edges:
        producer = c.src_resource == entry.resource
        peer = c.dst_resource if producer else c.src_resource
        peer_view = view.workers.get(peer)
        links.append(
            {
                "link_id": c.link_id,
                "from": c.src,
                "to": c.dst,
                "direction": c.direction,
                "role": "producer" if producer else "consumer",
                "peer_url": view.endpoint(peer),
                "peer_device": peer_view.device if peer_view else "",
            }
        )
    return {
        "fragment_id": uuid,
        "dataflow": uuid,
        "processors": [spec.processor(p).to_json() for p in sorted(entry.processors)],
        "internal_edges": [e.to_json() for e in entry.internal_edges],
        "links": links,
        "paused": sorted(set(paused) & entry.processors),
        "reset_edges": sorted(reset),
        "restore": dict(restore or {}),
    }


def start_order(spec: DataflowSpec, plan: FragmentPlan) -> list[str]:
    """Fragments holding the most downstream processors start first."""
    pos = {pid: i for i, pid in enumerate(topological_order(spec))}
    return sorted(plan.fragments, key=lambda w: (-max(pos[p] for p in plan.fragments[w].processors), w))


def _dedup(envelopes: list[dict]) -> list[dict]:
    seen: set[str] = set()
    out = []
    for env in envelopes:
        if env["batch_id"] in seen:
            continue
        seen.add(env["batch_id"])
        out.append(env)
    return out


class Deployer:
    def __init__(self, view: ResourceView):
        self.view = view

    def client(self, wid: str) -> EngineClient:
        try:
            return EngineClient(wid, self.view.endpoint(wid))
        except KeyError as exc:
            raise EngineError(wid, str(exc)) from None

    def _each(self, fn, items) -> None:
        items = list(items)
        if not items:
            return
        with ThreadPoolExecutor(max_workers=min(8, len(items))) as pool:
            for fut in [pool.submit(fn, *it) for it in items]:
                fut.result()

    # start / stop --------------------------------------------------------------------------

    def deploy(self, uuid: str, spec: DataflowSpec, plan: FragmentPlan) -> None:
        """Create every fragment, then start them downstream-first; undo everything on failure."""
        created: list[str] = []
        try:
            for wid in sorted(plan.fragments):
                self.client(wid).deploy(fragment_desc(uuid, spec, plan.fragments[wid], self.view))
                created.append(wid)
            for wid in start_order(spec, plan):
                self.client(wid).start(uuid)
        except EngineError as exc:
            for wid in created:
                try:
                    self.client(wid).undeploy(uuid)
                except EngineError as undo:
                    log.warning("rollback of %s on %s failed: %s", uuid, wid, undo)
            raise DeployFailed(exc.worker, str(exc)) from exc

    def undeploy(self, uuid: str, workers: Iterable[str], attempts: int = 3) -> list[str]:
        """Returns the workers that could not be reached."""
        unreachable = []
        for wid in sorted(set(workers)):
            for attempt in range(attempts):
                try:
                    self.client(wid).undeploy(uuid)
                    break
                except EngineError as exc:
                    if exc.status == 404:
                        break
                    if attempt == attempts - 1:
                        unreachable.append(wid)
        return unreachable

    # live migration --------------------------------------------------------------------------

    def snapshot(self, uuid: str, old: Mapping[str, str], edges: set[str]) -> dict[str, list[dict]]:
        """Every batch still in flight on ``edges``: consumer queue, producer outbox, producer pending."""
        wanted: dict[str, set[str]] = {}
        for key in edges:
            src, dst = split_edge_key(key)
            wanted.setdefault(old[src], set()).add(key)
            wanted.setdefault(old[dst], set()).add(key)
        inv = {wid: self.client(wid).queues(uuid, content=True, edges=keys) for wid, keys in wanted.items()}
        out = {}
        for key in sorted(edges):
            src, dst = split_edge_key(key)
            cw, pw = old[dst], old[src]
            batches = list(inv[cw]["queues"].get(key, {}).get("batches", []))
            if pw != cw:
                batches += inv[pw]["queues"].get(key, {}).get("batches", [])
            batches += inv[pw]["pending"].get(key, [])
            out[key] = _dedup(batches)
        return out

    def _pause(self, uuid: str, mapping: Mapping[str, str], pids: Iterable[str]) -> None:
        groups: dict[str, list[str]] = {}
        for p in pids:
            groups.setdefault(mapping[p], []).append(p)
        self._each(lambda w, ps: self.client(w).pause(uuid, ps), groups.items())

    def _resume(self, uuid: str, mapping: Mapping[str, str], pids: Iterable[str]) -> None:
        groups: dict[str, list[str]] = {}
        for p in pids:
            groups.setdefault(mapping[p], []).append(p)
        self._each(lambda w, ps: self.client(w).resume(uuid, ps), groups.items())

    def _inject(self, uuid: str, mapping: Mapping[str, str], snap: dict[str, list[dict]]) -> None:
        for key, envs in snap.items():
            if envs:
                self.client(mapping[split_edge_key(key)[1]]).inject(uuid, key, envs)

    def migrate(
        self,
        uuid: str,
        spec: DataflowSpec,
        old: Mapping[str, str],
        new: Mapping[str, str],
        old_plan: FragmentPlan,
        new_plan: FragmentPlan,
    ) -> list[str]:
        """Move processors from ``old`` to ``new`` without losing queued batches.

        Returns warnings (e.g. vacated workers that could not be cleaned up).
        Raises MigrationFailed after restoring the old placement.
        """
        diff = graph_diff(spec, old, new)
        if diff.empty:
            return []
        moved, affected = set(diff.moved), set(diff.affected)
        e_aff = {e.key for e in affected_edges(spec, moved)}
        frozen: set[str] = set()
        snap: dict[str, list[dict]] | None = None
        states: dict[str, dict] = {}
        try:
            self._pause(uuid, old, affected)
            for cut in old_plan.cut_edges:
                if f"{cut.src}->{cut.dst}" in e_aff:
                    for wid in {cut.src_resource, cut.dst_resource}:
                        self.client(wid).freeze(uuid, cut.link_id)
                    frozen.add(f"{cut.src}->{cut.dst}")
            snap = self.snapshot(uuid, old, e_aff)
            for pid in sorted(moved):
                states[pid] = self.client(old[pid]).processor_state(uuid, pid)

            gaining = sorted(set(new_plan.fragments) - set(old_plan.fragments))
            kept = sorted(set(new_plan.fragments) & set(old_plan.fragments))
            for wid in gaining + kept:
                entry = new_plan.fragments[wid]
                restore = {p: states[p] for p in entry.processors if p in moved}
                self.client(wid).put(fragment_desc(uuid, spec, entry, self.view, affected, e_aff, restore))
            self._inject(uuid, new, snap)
            self._resume(uuid, new, affected)
        except EngineError as exc:
            warnings = self._rollback(uuid, spec, old, old_plan, new_plan, affected, e_aff, frozen, snap, states)
            raise MigrationFailed(f"migration failed ({exc}); old placement restored", warnings) from exc

        warnings = []
        vacated = set(old_plan.fragments) - set(new_plan.fragments)
        for wid in self.undeploy(uuid, vacated):
            warnings.append(f"could not undeploy vacated fragment on {wid}")
        return warnings

    def _rollback(self, uuid, spec, old, old_plan, new_plan, affected, e_aff, frozen, snap, states) -> list[str]:
        warnings = []
        for wid in sorted(set(new_plan.fragments) - set(old_plan.fragments)):
            try:
                self.client(wid).undeploy(uuid)
            except EngineError as exc:
                if exc.status != 404:
                    warnings.append(f"rollback: could not clear {wid}: {exc}")
        if snap is None:
            try:
                snap = self.snapshot(uuid, old, e_aff)
            except EngineError as exc:
                warnings.append(f"rollback: queued batches on {sorted(frozen)} could not be recovered: {exc}")
        reset = e_aff if snap is not None else frozen
        for wid in sorted(old_plan.fragments):
            entry = old_plan.fragments[wid]
            restore = {p: states[p] for p in entry.processors if p in states}
            try:
                self.client(wid).put(fragment_desc(uuid, spec, entry, self.view, affected, reset, restore))
            except EngineError as exc:
                warnings.append(f"rollback: could not restore fragment on {wid}: {exc}")
        if snap is not None:
            try:
                self._inject(uuid, old, snap)
            except EngineError as exc:
                warnings.append(f"rollback: could not re-inject queued batches: {exc}")
        try:
            self._resume(uuid, old, affected)
        except EngineError as exc:
            warnings.append(f"rollback: could not resume processors: {exc}")
        return warnings
