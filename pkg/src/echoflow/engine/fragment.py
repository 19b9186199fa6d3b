"""Fragments and the engine that hosts them.

A fragment is the slice of one dataflow placed on this worker: processor
instances, one queue per edge end held here, and a remote link per cut
edge. The engine keeps a registry of link endpoints so the HTTP layer can
route ``/links/{id}`` requests to the right receiver or pull server.
"""

from __future__ import annotations

import logging
import shutil
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..databatch import DataBatch
from ..flowmodel import DataflowValidationError, EdgeSpec, ProcessorSpec, edge_key, processor_from_json, split_edge_key
from ..wrappers import ProcessorConfigError, ProcessorContext, UnknownKind, instantiate
from .links import LinkSpec, PullFetcher, PullServer, PushSender, Receiver
from .processor import DEPLOYED, PAUSED, RUNNING, STOPPED, IllegalTransition, ProcessorInstance
from .queues import DEFAULT_CAPACITY, EdgeQueue
from .throttle import Throttle

log = logging.getLogger(__name__)


class FragmentError(RuntimeError):
    status = 400


class DuplicateFragment(FragmentError):
    status = 409


class UnknownFragment(FragmentError):
    status = 404


class DeployError(FragmentError):
    status = 422


@dataclass
class FragmentDesc:
    """Wire form of a fragment deployment request."""

    fragment_id: str
    dataflow: str
    processors: list[ProcessorSpec]
    internal_edges: list[EdgeSpec] = field(default_factory=list)
    links: list[LinkSpec] = field(default_factory=list)
    paused: set[str] = field(default_factory=set)
    reset_edges: set[str] = field(default_factory=set)
    restore: dict[str, dict] = field(default_factory=dict)
    capacity: int = DEFAULT_CAPACITY

    @property
    def edge_keys(self) -> set[str]:
        return {e.key for e in self.internal_edges} | {link.edge for link in self.links}

    @classmethod
    def from_json(cls, d: dict) -> "FragmentDesc":
        try:
            procs = [processor_from_json(raw) for raw in d.get("processors", [])]
        except DataflowValidationError as exc:
            raise DeployError(str(exc)) from None
        return cls(
            fragment_id=str(d.get("fragment_id") or d["dataflow"]),
            dataflow=str(d["dataflow"]),
            processors=procs,
            internal_edges=[EdgeSpec(e["from"], e["to"]) for e in d.get("internal_edges", [])],
            links=[LinkSpec.from_json(x) for x in d.get("links", [])],
            paused=set(d.get("paused", [])),
            reset_edges=set(d.get("reset_edges", [])),
            restore=dict(d.get("restore", {})),
            capacity=int(d.get("capacity", DEFAULT_CAPACITY)),
        )

    def to_json(self) -> dict:
        return {
            "fragment_id": self.fragment_id,
            "dataflow": self.dataflow,
            "processors": [p.to_json() for p in self.processors],
            "internal_edges": [e.to_json() for e in self.internal_edges],
            "links": [x.to_json() for x in self.links],
            "paused": sorted(self.paused),
            "reset_edges": sorted(self.reset_edges),
            "restore": self.restore,
            "capacity": self.capacity,
        }


class Fragment:
    def __init__(self, desc: FragmentDesc, engine: "Engine"):
        self.id = desc.fragment_id
        self.dataflow = desc.dataflow
        self.engine = engine
        self.capacity = desc.capacity
        self.workdir = Path(tempfile.mkdtemp(prefix=f"frag-{self.id[:12]}-", dir=engine.workdir))
        self.processors: dict[str, ProcessorInstance] = {}
        self.queues: dict[str, EdgeQueue] = {}
        self.links: dict[str, object] = {}
        self.link_specs: dict[str, LinkSpec] = {}
        self.internal: set[str] = set()
        self.started = False
        self.lock = threading.RLock()

    # construction -------------------------------------------------------------

    def _make_processor(self, spec: ProcessorSpec) -> ProcessorInstance:
        ctx = ProcessorContext(spec.id, self.dataflow, self.workdir, device=self.engine.device)
        try:
            logic = instantiate(spec, ctx)
        except (UnknownKind, ProcessorConfigError) as exc:
            raise DeployError(f"processor {spec.id}: {exc}") from None
        inst = ProcessorInstance(spec, logic, self.engine.throttle)
        try:
            inst.open()
        except Exception as exc:
            raise DeployError(f"processor {spec.id}: {exc}") from None
        return inst

    def _make_link(self, spec: LinkSpec, queue: EdgeQueue):
        if spec.direction == "push":
            if spec.role == "producer":
                return PushSender(spec, queue, self.engine.device)
            return Receiver(spec, queue)
        if spec.role == "producer":
            return PullServer(spec, queue)
        return PullFetcher(spec, queue, self.engine.device)

    def _stop_link(self, link_id: str) -> None:
        link = self.links.pop(link_id, None)
        self.link_specs.pop(link_id, None)
        self.engine.unregister_link(link_id, link)
        if isinstance(link, (PushSender, PullFetcher)):
            link.stop()

    def apply(self, desc: FragmentDesc) -> None:
        """Bring the fragment in line with ``desc``.

        Existing processors, queues and links are kept unless their edge is
        listed in ``reset_edges``; reset queues start empty because the
        deployer has already taken their content.
        """
        with self.lock:
            wanted = {p.id: p for p in desc.processors}
            created: dict[str, ProcessorInstance] = {}
            try:
                for pid, spec in wanted.items():
                    if pid not in self.processors:
                        created[pid] = self._make_processor(spec)
            except DeployError:
                for inst in created.values():
                    inst.stop()
                raise
            for pid, inst in created.items():
                if pid in desc.restore:
                    inst.restore_state(desc.restore[pid])

            # processors leaving this worker
            for pid in [p for p in self.processors if p not in wanted]:
                self.processors.pop(pid).stop()
            self.processors.update(created)

            # links: drop any that are gone or being reset
            new_links = {x.link_id: x for x in desc.links}
            for lid in list(self.links):
                spec = self.link_specs[lid]
                if lid not in new_links or spec.edge in desc.reset_edges or new_links[lid] != spec:
                    self._stop_link(lid)

            # queues
            keys = desc.edge_keys
            for key in list(self.queues):
                if key not in keys or key in desc.reset_edges:
                    del self.queues[key]
            for key in keys:
                if key not in self.queues:
                    self.queues[key] = EdgeQueue(key, self.capacity)
            self.internal = {e.key for e in desc.internal_edges}
            for inst in self.processors.values():
                for key in desc.reset_edges:
                    inst.drop_pending(key)

            for lid, spec in new_links.items():
                if lid in self.links:
                    continue
                link = self._make_link(spec, self.queues[spec.edge])
                self.links[lid] = link
                self.link_specs[lid] = spec
                self.engine.register_link(lid, link)
                if self.started and isinstance(link, (PushSender, PullFetcher)):
                    link.start()

            # wiring
            for pid, inst in self.processors.items():
                # a cut edge only has its local end here, so endpoint names are enough
                ins = {k: q for k, q in self.queues.items() if split_edge_key(k)[1] == pid}
                outs = {k: q for k, q in self.queues.items() if split_edge_key(k)[0] == pid}
                inst.wire(ins, outs)

            for pid in desc.paused:
                if pid in self.processors:
                    self.processors[pid].pause()
            if self.started:
                for pid, inst in created.items():
                    inst.start(paused=pid in desc.paused)

    # lifecycle ------------------------------------------------------------------

    def start(self) -> None:
        with self.lock:
            if self.started:
                return
            self.started = True
            for link in self.links.values():
                if isinstance(link, (PushSender, PullFetcher)):
                    link.start()
            for inst in self.processors.values():
                if inst.state != STOPPED:
                    inst.start(paused=inst.state == PAUSED)

    def pause(self, pids) -> dict:
        with self.lock:
            targets = [self._proc(p) for p in pids]
        threads = [threading.Thread(target=t.pause) for t in targets]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        return {t.id: t.state for t in targets}

    def resume(self, pids) -> dict:
        with self.lock:
            targets = [self._proc(p) for p in pids]
            for t in targets:
                t.resume()
            return {t.id: t.state for t in targets}

    def freeze_link(self, link_id: str) -> bool:
        """Stop the active end of a link so nothing more crosses it."""
        with self.lock:
            link = self.links.get(link_id)
            if link is None:
                return False
            if isinstance(link, (PushSender, PullFetcher)):
                link.stop()
            self.engine.unregister_link(link_id, link)
            return True

    def undeploy(self) -> dict[str, int]:
        with self.lock:
            for inst in self.processors.values():
                inst.stop()
            for lid in list(self.links):
                self._stop_link(lid)
            counts = {k: q.depth for k, q in self.queues.items()}
            shutil.rmtree(self.workdir, ignore_errors=True)
            return counts

    # inspection -----------------------------------------------------------------

    def _proc(self, pid: str) -> ProcessorInstance:
        try:
            return self.processors[pid]
        except KeyError:
            raise FragmentError(f"fragment {self.id} has no processor {pid}") from None

    def inventory(self, content: bool = False, edges: set[str] | None = None) -> dict:
        with self.lock:
            out: dict = {"queues": {}, "pending": {}}
            for key, q in self.queues.items():
                if edges is not None and key not in edges:
                    continue
                items = q.snapshot()
                entry = {"depth": len(items), "tuples": sum(b.count for b in items)}
                if content:
                    entry["batches"] = [b.to_envelope() for b in items]
                out["queues"][key] = entry
            for inst in self.processors.values():
                for key in inst.outputs:
                    if edges is not None and key not in edges:
                        continue
                    pend = inst.pending_for(key)
                    if pend:
                        out["pending"][key] = [b.to_envelope() for b in pend] if content else len(pend)
            return out

    def inject(self, key: str, batches: list[DataBatch]) -> int:
        with self.lock:
            q = self.queues.get(key)
            if q is None:
                raise FragmentError(f"fragment {self.id} has no queue for edge {key}")
            return q.force(batches)

    def processor_state(self, pid: str) -> dict:
        return self._proc(pid).export_state()

    def status(self) -> dict:
        with self.lock:
            return {
                "fragment_id": self.id,
                "dataflow": self.dataflow,
                "started": self.started,
                "processors": {pid: p.status() for pid, p in self.processors.items()},
                "queues": {k: {"depth": q.depth, "tuples": q.tuple_depth} for k, q in self.queues.items()},
                "links": {lid: link.state() for lid, link in self.links.items()},
            }


class Engine:
    """All fragments hosted by one worker sandbox."""

    def __init__(
        self,
        worker_id: str = "local",
        device: str = "",
        cpu_millis: int = 1000,
        mem_mb: int = 512,
        profile: str = "unthrottled",
        workdir: str | None = None,
    ):
        self.worker_id = worker_id
        self.device = device or worker_id
        self.cpu_millis = cpu_millis
        self.mem_mb = mem_mb
        self.profile = profile
        self.throttle = Throttle(cpu_millis, profile)
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix=f"engine-{worker_id}-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.fragments: dict[str, Fragment] = {}
        self._links: dict[str, object] = {}
        self._lock = threading.RLock()

    # link registry ----------------------------------------------------------------

    def register_link(self, link_id: str, link) -> None:
        if isinstance(link, (Receiver, PullServer)):
            with self._lock:
                self._links[link_id] = link

    def unregister_link(self, link_id: str, link) -> None:
        with self._lock:
            if self._links.get(link_id) is link:
                del self._links[link_id]

    def link_endpoint(self, link_id: str):
        with self._lock:
            return self._links.get(link_id)

    # fragments --------------------------------------------------------------------

    def fragment(self, fid: str) -> Fragment:
        with self._lock:
            frag = self.fragments.get(fid)
        if frag is None:
            raise UnknownFragment(f"no fragment {fid}")
        return frag

    def deploy(self, desc: FragmentDesc) -> Fragment:
        with self._lock:
            if desc.fragment_id in self.fragments:
                raise DuplicateFragment(f"fragment {desc.fragment_id} already deployed")
            frag = Fragment(desc, self)
            self.fragments[desc.fragment_id] = frag
        try:
            frag.apply(desc)
        except Exception:
            with self._lock:
                self.fragments.pop(desc.fragment_id, None)
            frag.undeploy()
            raise
        return frag

    def upsert(self, desc: FragmentDesc, start: bool = True) -> Fragment:
        with self._lock:
            frag = self.fragments.get(desc.fragment_id)
        if frag is None:
            frag = self.deploy(desc)
            if start:
                frag.start()
            return frag
        frag.apply(desc)
        return frag

    def undeploy(self, fid: str) -> dict[str, int]:
        frag = self.fragment(fid)
        with self._lock:
            self.fragments.pop(fid, None)
        return frag.undeploy()

    def shutdown(self) -> None:
        for fid in list(self.fragments):
            try:
                self.undeploy(fid)
            except FragmentError:
                pass
        shutil.rmtree(self.workdir, ignore_errors=True)

    def status(self) -> dict:
        with self._lock:
            frags = list(self.fragments.values())
        return {
            "worker_id": self.worker_id,
            "device": self.device,
            "profile": self.profile,
            "caps": {"cpu_millis": self.cpu_millis, "mem_mb": self.mem_mb},
            "fragments": {f.id: f.status() for f in frags},
        }


__all__ = [
    "DEPLOYED",
    "PAUSED",
    "RUNNING",
    "STOPPED",
    "DeployError",
    "DuplicateFragment",
    "Engine",
    "Fragment",
    "FragmentDesc",
    "FragmentError",
    "IllegalTransition",
    "UnknownFragment",
    "edge_key",
]
