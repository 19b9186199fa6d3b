"""App Manager: one instance per lifecycle request, all state in the catalog."""

from __future__ import annotations

import json
import logging
import secrets
import uuid as uuidlib
from dataclasses import dataclass, field
from datetime import timedelta

from ..catalog import CatalogClient, CatalogItem, Conflict, Relation
from ..common import EXPIRES, REL, iso, now_iso, utcnow
from ..flowmodel import (
    DataflowSpec,
    DataflowValidationError,
    FragmentPlan,
    UnschedulableLink,
    edge_cut,
    from_json,
    graph_diff,
    parse_and_validate,
)
from .deployer import Deployer, DeployFailed, MigrationFailed
from .resources import ResourceView, load_view
from .scheduler import SCHEDULERS, Infeasible, Scheduler, validate_mapping

log = logging.getLogger(__name__)

LOCK_TTL_S = 60
TS = REL + "ts:"
WARNING = REL + "warning"


class ApiError(Exception):
    def __init__(self, status: int, detail):
        super().__init__(str(detail))
        self.status = status
        self.detail = detail


@dataclass
class DataflowRecord:
    uuid: str
    name: str
    state: str
    spec: dict
    mapping: dict = field(default_factory=dict)
    plan: dict = field(default_factory=dict)
    timestamps: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def href(self) -> str:
        return f"/dataflow/{self.uuid}"

    def to_item(self) -> CatalogItem:
        rels = [
            Relation(REL + "name", self.name),
            Relation(REL + "state", self.state),
            Relation(REL + "spec", json.dumps(self.spec, sort_keys=True)),
            Relation(REL + "mapping", json.dumps(self.mapping, sort_keys=True)),
            Relation(REL + "plan", json.dumps(self.plan, sort_keys=True)),
        ]
        rels += [Relation(TS + s, ts) for s, ts in self.timestamps.items()]
        rels += [Relation(WARNING, w) for w in self.warnings]
        return CatalogItem(self.href, tuple(rels))

    @classmethod
    def from_item(cls, item: CatalogItem) -> "DataflowRecord":
        uuid = item.href.split("/")[2]
        return cls(
            uuid=uuid,
            name=item.get("name", ""),
            state=item.get("state", ""),
            spec=json.loads(item.get("spec", "{}")),
            mapping=json.loads(item.get("mapping", "{}")),
            plan=json.loads(item.get("plan", "{}") or "{}"),
            timestamps={r.rel[len(TS):]: r.val for r in item.metadata if r.rel.startswith(TS)},
            warnings=item.values(WARNING),
        )

    def to_json(self) -> dict:
        return {
            "uuid": self.uuid,
            "name": self.name,
            "state": self.state,
            "spec": self.spec,
            "mapping": self.mapping,
            "plan": self.plan,
            "timestamps": self.timestamps,
            "warnings": self.warnings,
        }


class CatalogLock:
    """Per-dataflow mutual exclusion as a catalog item with an expiry."""

    def __init__(self, catalog: CatalogClient, uuid: str, ttl_s: int = LOCK_TTL_S):
        self.catalog = catalog
        self.href = f"/dataflow/{uuid}/lock"
        self.ttl_s = ttl_s
        self.token = secrets.token_hex(8)

    def __enter__(self) -> "CatalogLock":
        expires = iso(utcnow() + timedelta(seconds=self.ttl_s))
        item = CatalogItem(self.href, (Relation(REL + "owner", self.token), Relation(EXPIRES, expires)))
        try:
            self.catalog.register(item, if_absent=True)
        except Conflict:
            raise ApiError(409, f"dataflow {self.href.split('/')[2]} is busy with another request") from None
        return self

    def __exit__(self, *exc) -> None:
        current = self.catalog.get(self.href)
        if current is not None and current.get("owner") == self.token:
            self.catalog.delete(self.href)


class AppManager:
    def __init__(self, catalog: CatalogClient, scheduler: Scheduler | str = "first_fit"):
        self.catalog = catalog
        self.scheduler: Scheduler = SCHEDULERS[scheduler] if isinstance(scheduler, str) else scheduler

    # records ---------------------------------------------------------------------------

    def record(self, uuid: str) -> DataflowRecord:
        item = self.catalog.get(f"/dataflow/{uuid}")
        if item is None:
            raise ApiError(404, f"unknown dataflow {uuid}")
        return DataflowRecord.from_item(item)

    def _save(self, rec: DataflowRecord, state: str | None = None) -> None:
        if state:
            rec.state = state
            rec.timestamps[state] = now_iso()
        self.catalog.register(rec.to_item())

    def _schedule(self, spec: DataflowSpec, view: ResourceView, current=None) -> dict[str, str]:
        try:
            mapping = self.scheduler(spec, view, current)
        except Infeasible as exc:
            raise ApiError(409, f"infeasible schedule: {exc.reason}") from None
        problems = validate_mapping(spec, view, mapping)
        if problems:
            raise ApiError(409, "scheduler produced an unsound mapping: " + "; ".join(problems))
        return mapping

    @staticmethod
    def _plan(spec: DataflowSpec, mapping, view: ResourceView, uuid: str) -> FragmentPlan:
        try:
            return edge_cut(spec, mapping, view.can_connect, uuid)
        except UnschedulableLink as exc:
            raise ApiError(409, str(exc)) from None

    # lifecycle ---------------------------------------------------------------------------

    def start(self, payload: bytes | str | dict) -> str:
        try:
            spec = from_json(payload) if isinstance(payload, dict) else parse_and_validate(payload)
        except DataflowValidationError as exc:
            raise ApiError(400, {"violations": exc.violations}) from None
        view = load_view(self.catalog)
        mapping = self._schedule(spec, view)
        uuid = uuidlib.uuid4().hex
        plan = self._plan(spec, mapping, view, uuid)
        rec = DataflowRecord(uuid, spec.name, "scheduling", spec.to_json(), mapping, plan.to_json())
        rec.warnings = list(plan.warnings)
        with CatalogLock(self.catalog, uuid):
            self._save(rec, "scheduling")
            self._save(rec, "deploying")
            try:
                Deployer(view).deploy(uuid, spec, plan)
            except DeployFailed as exc:
                rec.warnings.append(f"deployment failed on {exc.worker}: {exc}")
                self._save(rec, "failed")
                raise ApiError(502, f"deployment failed on worker {exc.worker}: {exc}") from None
            self._save(rec, "running")
        return uuid

    def stop(self, uuid: str) -> DataflowRecord:
        with CatalogLock(self.catalog, uuid):
            rec = self.record(uuid)
            if rec.state == "stopped":
                raise ApiError(409, f"dataflow {uuid} is already stopped")
            if rec.state not in ("running", "failed"):
                raise ApiError(409, f"dataflow {uuid} cannot be stopped while {rec.state}")
            self._save(rec, "stopping")
            view = load_view(self.catalog)
            workers = set(rec.mapping.values())
            unreachable = Deployer(view).undeploy(uuid, workers)
            if unreachable:
                rec.warnings.append("unreachable workers during stop: " + ", ".join(unreachable))
            self._save(rec, "stopped")
            return rec

    def rebalance(self, uuid: str) -> dict:
        with CatalogLock(self.catalog, uuid):
            rec = self.record(uuid)
            if rec.state != "running":
                raise ApiError(409, f"dataflow {uuid} cannot be rebalanced while {rec.state}")
            spec = from_json(rec.spec)
            old = dict(rec.mapping)
            view = load_view(self.catalog, exclude_dataflow=uuid)
            new = self._schedule(spec, view, current=old)
            diff = graph_diff(spec, old, new)
            if diff.empty:
                return {"uuid": uuid, "mapping": old, "moved": [], "noop": True}
            new_plan = self._plan(spec, new, view, uuid)
            old_plan = FragmentPlan.from_json(rec.plan)
            self._save(rec, "rebalancing")
            try:
                warnings = Deployer(view).migrate(uuid, spec, old, new, old_plan, new_plan)
            except MigrationFailed as exc:
                rec.warnings += [str(exc), *exc.warnings]
                self._save(rec, "running")
                raise ApiError(502, {"error": str(exc), "warnings": exc.warnings, "mapping": old}) from None
            rec.mapping = new
            rec.plan = new_plan.to_json()
            rec.warnings += warnings + list(new_plan.warnings)
            self._save(rec, "running")
            return {"uuid": uuid, "mapping": new, "moved": sorted(diff.moved), "noop": False}

    # queries -----------------------------------------------------------------------------

    def describe(self, uuid: str) -> dict:
        rec = self.record(uuid)
        out = rec.to_json()
        out["metrics"] = self.metrics_summary(uuid)
        return out

    def metrics_summary(self, uuid: str) -> dict:
        procs: dict[str, dict] = {}
        for item in self.catalog.query(f"/dataflow/{uuid}/metrics/"):
            try:
                doc = json.loads(item.get("metrics", "{}"))
            except ValueError:
                continue
            for pid, p in doc.get("processors", {}).items():
                procs[pid] = {
                    "worker": doc.get("worker"),
                    "state": p.get("state"),
                    "tuples_in_per_s": p.get("tuples_in_per_s", 0.0),
                    "tuples_out_per_s": p.get("tuples_out_per_s", 0.0),
                    "tuples_in": p.get("counters", {}).get("tuples_in", 0),
                    "errors": p.get("counters", {}).get("errors", 0),
                }
        return {"processors": procs}

    def list(self) -> list[dict]:
        out = []
        for item in self.catalog.query("/dataflow/"):
            if item.href.count("/") == 2:
                out.append({"uuid": item.href.split("/")[2], "name": item.get("name"), "state": item.get("state")})
        return out
