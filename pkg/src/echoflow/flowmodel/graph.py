"""Pure graph algorithms: ordering, edge-cut partitioning and placement diffs."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .spec import DataflowSpec, EdgeSpec, cycle_members

PUSH = "push"
PULL = "pull"

Reachability = Callable[[str, str], bool]
"""``can_connect(src_resource, dst_resource)``: src may open a connection to dst."""


class UnschedulableLink(ValueError):
    def __init__(self, edge: EdgeSpec, src_res: str, dst_res: str):
        super().__init__(
            f"unschedulable link {edge.src}->{edge.dst}: neither {src_res} nor {dst_res} can reach the other"
        )
        self.edge = edge
        self.src_res = src_res
        self.dst_res = dst_res


class MappingError(ValueError):
    pass


def full_reachability(src: str, dst: str) -> bool:
    return True


def reachability_from_sets(reachable_from: Mapping[str, Iterable[str]]) -> Reachability:
    """``reachable_from[dst]`` lists the resources allowed to connect to dst ("*" = all)."""
    table = {k: set(v) for k, v in reachable_from.items()}

    def can_connect(src: str, dst: str) -> bool:
        if src == dst:
            return True
        allowed = table.get(dst)
        if allowed is None:
            return True
        return "*" in allowed or src in allowed

    return can_connect


@dataclass(frozen=True)
class CutEdge:
    src: str
    dst: str
    src_resource: str
    dst_resource: str
    direction: str
    link_id: str

    def to_json(self) -> dict:
        return {
            "from": self.src,
            "to": self.dst,
            "from_resource": self.src_resource,
            "to_resource": self.dst_resource,
            "direction": self.direction,
            "link_id": self.link_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CutEdge":
        return cls(d["from"], d["to"], d["from_resource"], d["to_resource"], d["direction"], d["link_id"])


@dataclass
class FragmentEntry:
    resource: str
    processors: set[str] = field(default_factory=set)
    internal_edges: list[EdgeSpec] = field(default_factory=list)
    cut_edges: list[CutEdge] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "resource": self.resource,
            "processors": sorted(self.processors),
            "internal_edges": [e.to_json() for e in self.internal_edges],
            "cut_edges": [c.to_json() for c in self.cut_edges],
        }

    @classmethod
    def from_json(cls, d: dict) -> "FragmentEntry":
        return cls(
            resource=d["resource"],
            processors=set(d["processors"]),
            internal_edges=[EdgeSpec(e["from"], e["to"]) for e in d["internal_edges"]],
            cut_edges=[CutEdge.from_json(c) for c in d["cut_edges"]],
        )


@dataclass
class FragmentPlan:
    fragments: dict[str, FragmentEntry] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def cut_edges(self) -> list[CutEdge]:
        seen: dict[str, CutEdge] = {}
        for frag in self.fragments.values():
            for c in frag.cut_edges:
                seen.setdefault(c.link_id, c)
        return sorted(seen.values(), key=lambda c: c.link_id)

    def to_json(self) -> dict:
        return {
            "fragments": {r: f.to_json() for r, f in sorted(self.fragments.items())},
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FragmentPlan":
        return cls(
            fragments={r: FragmentEntry.from_json(f) for r, f in d["fragments"].items()},
            warnings=list(d.get("warnings", [])),
        )


@dataclass(frozen=True)
class MigrationSet:
    moved: frozenset[str]
    affected: frozenset[str]

    @property
    def empty(self) -> bool:
        return not self.moved


def link_id(dataflow: str, src: str, dst: str) -> str:
    return f"{dataflow}-{src}-{dst}"


def check_total(spec: DataflowSpec, mapping: Mapping[str, str]) -> None:
    ids = set(spec.ids)
    missing = ids - set(mapping)
    extra = set(mapping) - ids
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"unassigned: {', '.join(sorted(missing))}")
        if extra:
            parts.append(f"unknown: {', '.join(sorted(extra))}")
        raise MappingError("mapping is not total over the dataflow (" + "; ".join(parts) + ")")


def edge_cut(
    spec: DataflowSpec,
    mapping: Mapping[str, str],
    reachability: Reachability = full_reachability,
    dataflow_id: str | None = None,
) -> FragmentPlan:
    """Partition the dataflow by resource and pick a direction for every cut edge.

    Push (upstream connects) is preferred; pull is used when only the
    downstream resource can open the connection.
    """
    check_total(spec, mapping)
    df = dataflow_id or spec.name
    plan = FragmentPlan()
    for p in spec.processors:
        res = mapping[p.id]
        plan.fragments.setdefault(res, FragmentEntry(res)).processors.add(p.id)
    for e in spec.edges:
        src_res, dst_res = mapping[e.src], mapping[e.dst]
        if src_res == dst_res:
            plan.fragments[src_res].internal_edges.append(e)
            continue
        if reachability(src_res, dst_res):
            direction = PUSH
        elif reachability(dst_res, src_res):
            direction = PULL
        else:
            raise UnschedulableLink(e, src_res, dst_res)
        cut = CutEdge(e.src, e.dst, src_res, dst_res, direction, link_id(df, e.src, e.dst))
        plan.fragments[src_res].cut_edges.append(cut)
        plan.fragments[dst_res].cut_edges.append(cut)

    cycles = cycle_members(spec)
    for c in plan.cut_edges:
        for comp in cycles:
            if c.src in comp and c.dst in comp:
                plan.warnings.append(
                    f"cut edge {c.src}->{c.dst} lies on a cycle spanning {c.src_resource} and {c.dst_resource}"
                )
                break
    return plan


def graph_diff(spec: DataflowSpec, old: Mapping[str, str], new: Mapping[str, str]) -> MigrationSet:
    """Processors whose resource changed, plus their graph neighbours (the pause set)."""
    if set(old) != set(new):
        raise MappingError("old and new mappings cover different processor sets")
    check_total(spec, old)
    moved = {p for p in old if old[p] != new[p]}
    affected = set(moved)
    for e in spec.edges:
        if e.src in moved or e.dst in moved:
            affected.add(e.src)
            affected.add(e.dst)
    return MigrationSet(frozenset(moved), frozenset(affected))


def topological_order(spec: DataflowSpec) -> list[str]:
    """Kahn's order with lexicographic tie-break; a cycle is broken at its smallest id."""
    indeg = {p.id: 0 for p in spec.processors}
    succ: dict[str, list[str]] = {p.id: [] for p in spec.processors}
    for e in spec.edges:
        if e.src == e.dst:
            continue
        indeg[e.dst] += 1
        succ[e.src].append(e.dst)
    ready = [pid for pid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    done: set[str] = set()
    order: list[str] = []
    while len(order) < len(indeg):
        if not ready:
            heapq.heappush(ready, min(pid for pid in indeg if pid not in done))
        pid = heapq.heappop(ready)
        if pid in done:
            continue
        done.add(pid)
        order.append(pid)
        for nxt in succ[pid]:
            if nxt in done:
                continue
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(ready, nxt)
    return order


def affected_edges(spec: DataflowSpec, moved: Iterable[str]) -> list[EdgeSpec]:
    moved = set(moved)
    return [e for e in spec.edges if e.src in moved or e.dst in moved]
