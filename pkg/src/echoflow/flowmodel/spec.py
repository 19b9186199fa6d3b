"""Dataflow specification types, JSON (de)serialization and validation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")
_KIND = re.compile(r"^(builtin:[A-Za-z0-9_]+|cep|exec|bridge)$")


class DataModelKind(str, Enum):
    STREAM = "stream"
    MICROBATCH = "microbatch"
    FILE = "file"


@dataclass(frozen=True)
class ResourceDemand:
    cpu_millis: int = 0
    mem_mb: int = 0

    def to_json(self) -> dict:
        return {"cpu_millis": self.cpu_millis, "mem_mb": self.mem_mb}


@dataclass(frozen=True)
class ProcessorSpec:
    id: str
    kind: str
    input_model: DataModelKind = DataModelKind.MICROBATCH
    output_model: DataModelKind = DataModelKind.MICROBATCH
    config: dict = field(default_factory=dict)
    demands: ResourceDemand = field(default_factory=ResourceDemand)
    constraints: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "input_model": self.input_model.value,
            "output_model": self.output_model.value,
            "config": self.config,
            "demands": self.demands.to_json(),
            "constraints": list(self.constraints),
        }


@dataclass(frozen=True)
class EdgeSpec:
    src: str
    dst: str

    @property
    def key(self) -> str:
        return edge_key(self.src, self.dst)

    def to_json(self) -> dict:
        return {"from": self.src, "to": self.dst}


@dataclass(frozen=True)
class DataflowSpec:
    name: str
    processors: tuple[ProcessorSpec, ...]
    edges: tuple[EdgeSpec, ...]
    qos: dict = field(default_factory=dict)

    def processor(self, pid: str) -> ProcessorSpec:
        for p in self.processors:
            if p.id == pid:
                return p
        raise KeyError(pid)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.processors]

    def in_edges(self, pid: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.dst == pid]

    def out_edges(self, pid: str) -> list[EdgeSpec]:
        return [e for e in self.edges if e.src == pid]

    def neighbors(self, pid: str) -> set[str]:
        out = set()
        for e in self.edges:
            if e.src == pid:
                out.add(e.dst)
            if e.dst == pid:
                out.add(e.src)
        out.discard(pid)
        return out

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "processors": [p.to_json() for p in self.processors],
            "edges": [e.to_json() for e in self.edges],
            "qos": self.qos,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def edge_key(src: str, dst: str) -> str:
    return f"{src}->{dst}"


def split_edge_key(key: str) -> tuple[str, str]:
    src, dst = key.split("->", 1)
    return src, dst


class DataflowValidationError(ValueError):
    """Raised with every violation found, not just the first."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def _as_int(value: Any, what: str, violations: list[str]) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        violations.append(f"{what} must be an integer")
        return 0
    if value < 0:
        violations.append(f"{what} must be non-negative")
    return value


def _parse_processor(raw: Any, index: int, violations: list[str]) -> ProcessorSpec | None:
    where = f"processors[{index}]"
    if not isinstance(raw, dict):
        violations.append(f"{where} must be an object")
        return None
    pid = raw.get("id")
    if not isinstance(pid, str) or not _ID.match(pid):
        violations.append(f"{where}: invalid id {pid!r}")
        return None
    where = f"processor {pid}"
    kind = raw.get("kind")
    if not isinstance(kind, str) or not _KIND.match(kind):
        violations.append(f"{where}: invalid kind {kind!r}")
    models = {}
    for port in ("input_model", "output_model"):
        val = raw.get(port)
        if val is None:
            violations.append(f"{where}: missing model annotation {port}")
            models[port] = DataModelKind.MICROBATCH
            continue
        try:
            models[port] = DataModelKind(val)
        except ValueError:
            violations.append(f"{where}: unknown {port} {val!r}")
            models[port] = DataModelKind.MICROBATCH
    config = raw.get("config", {})
    if not isinstance(config, dict):
        violations.append(f"{where}: config must be an object")
        config = {}
    demands_raw = raw.get("demands", {})
    if not isinstance(demands_raw, dict):
        violations.append(f"{where}: demands must be an object")
        demands_raw = {}
    demands = ResourceDemand(
        _as_int(demands_raw.get("cpu_millis", 0), f"{where}: demands.cpu_millis", violations),
        _as_int(demands_raw.get("mem_mb", 0), f"{where}: demands.mem_mb", violations),
    )
    constraints = raw.get("constraints", []) or []
    if not isinstance(constraints, list) or not all(isinstance(c, str) for c in constraints):
        violations.append(f"{where}: constraints must be a list of strings")
        constraints = []
    return ProcessorSpec(
        id=pid,
        kind=kind if isinstance(kind, str) else "",
        input_model=models["input_model"],
        output_model=models["output_model"],
        config=config,
        demands=demands,
        constraints=tuple(constraints),
    )


def processor_from_json(raw: Any) -> ProcessorSpec:
    violations: list[str] = []
    p = _parse_processor(raw, 0, violations)
    if violations or p is None:
        raise DataflowValidationError(violations)
    return p


def from_json(data: Any) -> DataflowSpec:
    """Build a spec from parsed JSON; raises DataflowValidationError."""
    violations: list[str] = []
    if not isinstance(data, dict):
        raise DataflowValidationError(["dataflow must be a JSON object"])
    name = data.get("name")
    if not isinstance(name, str) or not name:
        violations.append("dataflow needs a non-empty string 'name'")
        name = ""
    raw_procs = data.get("processors")
    if not isinstance(raw_procs, list) or not raw_procs:
        violations.append("'processors' must be a non-empty list")
        raw_procs = []
    raw_edges = data.get("edges", [])
    if not isinstance(raw_edges, list):
        violations.append("'edges' must be a list")
        raw_edges = []
    qos = data.get("qos", {}) or {}
    if not isinstance(qos, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in qos.items()):
        violations.append("'qos' must map strings to strings")
        qos = {}

    processors = []
    seen: set[str] = set()
    for i, raw in enumerate(raw_procs):
        p = _parse_processor(raw, i, violations)
        if p is None:
            continue
        if p.id in seen:
            violations.append(f"duplicate id {p.id}")
            continue
        seen.add(p.id)
        processors.append(p)

    edges = []
    seen_edges: set[tuple[str, str]] = set()
    for i, raw in enumerate(raw_edges):
        if not isinstance(raw, dict) or not isinstance(raw.get("from"), str) or not isinstance(raw.get("to"), str):
            violations.append(f"edges[{i}] needs string 'from' and 'to'")
            continue
        src, dst = raw["from"], raw["to"]
        bad = False
        for end in (src, dst):
            if end not in seen:
                violations.append(f"unknown processor {end}")
                bad = True
        if bad:
            continue
        if (src, dst) in seen_edges:
            violations.append(f"duplicate edge {src}->{dst}")
            continue
        seen_edges.add((src, dst))
        edges.append(EdgeSpec(src, dst))

    if processors and not violations:
        has_input = {e.dst for e in edges}
        if all(p.id in has_input for p in processors):
            violations.append("no source: every processor has an incoming edge (pure cycle, no ingestion point)")

    if violations:
        raise DataflowValidationError(violations)
    return DataflowSpec(name=name, processors=tuple(processors), edges=tuple(edges), qos=dict(qos))


def parse_and_validate(payload: bytes | str) -> DataflowSpec:
    try:
        data = json.loads(payload)
    except ValueError as exc:
        raise DataflowValidationError([f"JSON syntax error: {exc}"]) from exc
    return from_json(data)


def cycle_members(spec: DataflowSpec) -> list[set[str]]:
    """Strongly connected components that contain a cycle (including self-loops)."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    comps: list[set[str]] = []
    succ = {p.id: [] for p in spec.processors}
    for e in spec.edges:
        succ[e.src].append(e.dst)
    counter = [0]

    def strong(v: str) -> None:
        # iterative Tarjan to stay clear of the recursion limit on long chains
        work = [(v, iter(succ[v]))]
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                if w in on_stack:
                    low[node] = min(low[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = set()
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.add(w)
                    if w == node:
                        break
                comps.append(comp)

    for p in spec.processors:
        if p.id not in index:
            strong(p.id)
    selfloops = {e.src for e in spec.edges if e.src == e.dst}
    return [c for c in comps if len(c) > 1 or c & selfloops]
