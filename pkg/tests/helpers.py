"""Shared builders and reference oracles for the test suite."""

from __future__ import annotations

import json
import random

from echoflow.flowmodel import DataflowSpec, EdgeSpec, ProcessorSpec, ResourceDemand


def proc(pid, kind="builtin:identity", i="microbatch", o="microbatch", cpu=0, mem=0, config=None, constraints=()):
    return {"id": pid, "kind": kind, "input_model": i, "output_model": o, "config": dict(config or {}),
            "demands": {"cpu_millis": cpu, "mem_mb": mem}, "constraints": list(constraints)}


def flow(name, procs, edges, qos=None) -> dict:
    return {"name": name, "processors": procs, "edges": [{"from": a, "to": b} for a, b in edges], "qos": qos or {}}


def random_graph(rng: random.Random, max_nodes: int = 50) -> DataflowSpec:
    """Random directed graph (cycles and self-loops allowed) with at least one source."""
    n = rng.randint(1, max_nodes)
    ids = [f"p{i}" for i in range(n)]
    pairs = set()
    for _ in range(rng.randint(0, 3 * n)):
        a, b = rng.choice(ids), rng.choice(ids)
        if b != ids[0]:  # keeps p0 a source
            pairs.add((a, b))
    procs = tuple(ProcessorSpec(pid, "builtin:identity", demands=ResourceDemand()) for pid in ids)
    return DataflowSpec("g", procs, tuple(EdgeSpec(a, b) for a, b in sorted(pairs)))


def random_mapping(rng: random.Random, spec: DataflowSpec, resources: int = 4) -> dict[str, str]:
    return {p.id: f"r{rng.randrange(resources)}" for p in spec.processors}


def random_reachability(rng: random.Random, resources: int = 4):
    table = {(a, b): rng.random() < 0.7 for a in range(resources) for b in range(resources)}
    return lambda s, d: s == d or table[(int(s[1:]), int(d[1:]))]


# reference oracles: direct set comprehensions over the definitions


def oracle_cut(spec: DataflowSpec, mapping) -> set[tuple[str, str]]:
    return {(e.src, e.dst) for e in spec.edges if mapping[e.src] != mapping[e.dst]}


def oracle_diff(spec: DataflowSpec, old, new) -> tuple[set[str], set[str]]:
    moved = {p for p in old if old[p] != new[p]}
    neighbours = {e.dst for e in spec.edges if e.src in moved} | {e.src for e in spec.edges if e.dst in moved}
    return moved, moved | neighbours


def oracle_direction(reach, src_res, dst_res) -> str | None:
    if reach(src_res, dst_res):
        return "push"
    if reach(dst_res, src_res):
        return "pull"
    return None


def check_plan(spec: DataflowSpec, mapping, plan, reach=None) -> list[str]:
    """Every mismatch between a FragmentPlan and the oracles; empty means the plan is exact."""
    problems = []
    cut = {(c.src, c.dst) for c in plan.cut_edges}
    if cut != oracle_cut(spec, mapping):
        problems.append("cut edge set differs from oracle")
    procs = [p for f in plan.fragments.values() for p in f.processors]
    if sorted(procs) != sorted(spec.ids):
        problems.append("fragments do not partition the processors")
    for res, frag in plan.fragments.items():
        if any(mapping[p] != res for p in frag.processors):
            problems.append(f"fragment {res} holds a processor mapped elsewhere")
        for c in frag.cut_edges:
            if res not in (c.src_resource, c.dst_resource):
                problems.append(f"cut edge {c.link_id} listed in unrelated fragment {res}")
    internal = sorted((e.src, e.dst) for f in plan.fragments.values() for e in f.internal_edges)
    union = sorted(internal + [(c.src, c.dst) for c in plan.cut_edges])
    if union != sorted((e.src, e.dst) for e in spec.edges):
        problems.append("internal and cut edges do not reconstruct the edge multiset")
    for c in plan.cut_edges:
        holders = [r for r, f in plan.fragments.items() if c in f.cut_edges]
        if sorted(holders) != sorted({c.src_resource, c.dst_resource}):
            problems.append(f"cut edge {c.link_id} not in exactly its two fragments")
        if reach is not None and c.direction != oracle_direction(reach, c.src_resource, c.dst_resource):
            problems.append(f"cut edge {c.link_id} has direction {c.direction}")
    return problems


def random_events(rng: random.Random, n: int):
    """Mixed int/float values, unicode and space-bearing names, full-range timestamps."""
    from echoflow.databatch import EventTuple

    names = rng.choices(("temp", "hum", "fare", "dist", "π", "a b"), k=n)
    units = rng.choices(("", "Cel", "%"), k=n)
    kinds = rng.choices(range(4), k=n)
    make = (lambda: rng.randint(-10**9, 10**9), lambda: rng.uniform(-1e6, 1e6), lambda: 0, lambda: 0.1)
    return [EventTuple(names[i], make[kinds[i]](), units[i], rng.getrandbits(41)) for i in range(n)]


# in-process deployments ---------------------------------------------------------------


def linear_flow(infile, outdir, records: int, src_rate: float = 0, window: int = 25) -> dict:
    """source -> parse -> cep -> annotate -> sink, every hop carrying real tuples."""
    from pathlib import Path

    out = Path(outdir)
    return flow("linear", [
        proc("src", "builtin:source_replay", o="microbatch",
             config={"file": str(infile), "rate": src_rate, "batch_records": 20, "limit": records}),
        proc("parse", "builtin:parse_senml", o="stream", config={"window": {"mode": "count", "count_n": window}}),
        proc("cep", "cep", "stream", "stream", config={"query": [{"op": "scale", "factor": 1.0}],
                                                         "window": {"mode": "count", "count_n": window}}),
        proc("annotate", "builtin:annotate", config={"key": "stage", "val": "clean"}),
        proc("sink", "builtin:sink_file", config={"path": str(out / "sink.out")}),
    ], [("src", "parse"), ("parse", "cep"), ("cep", "annotate"), ("annotate", "sink")])


def deploy_mapped(catalog, payload: dict, mapping: dict[str, str], uuid: str):
    """Cut, describe and start a dataflow on the given workers; returns the plan."""
    from echoflow.flowmodel import edge_cut, from_json
    from echoflow.master import Deployer, load_view

    spec = from_json(payload)
    view = load_view(catalog)
    plan = edge_cut(spec, mapping, view.can_connect, uuid)
    Deployer(view).deploy(uuid, spec, plan)
    return plan


def wait_closed(engine, uuid: str, pid: str, timeout: float = 60.0) -> dict:
    import time

    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        st = engine.fragment(uuid).status()["processors"][pid]
        if st["closed"]:
            return st
        time.sleep(0.1)
    raise AssertionError(f"{pid} did not close within {timeout}s")


def sink_tuples(path):
    from collections import Counter

    from echoflow.databatch import EventTuple

    with open(path) as fh:
        return Counter(EventTuple.from_json(json.loads(ln)) for ln in fh if ln.strip())


def input_tuples(path):
    from collections import Counter

    from echoflow.wrappers.senml import parse_record

    with open(path) as fh:
        return Counter(t for ln in fh if ln.strip() for t in parse_record(ln))


# direction modes for a chain w1 -> w2 -> w3: reachable_from per worker
DIRECTION_MODES = {
    "push": {"w1": ["*"], "w2": ["*"], "w3": ["*"]},
    "pull": {"w1": ["*"], "w2": ["w3"], "w3": ["nobody"]},
    "mixed": {"w1": ["*"], "w2": ["*"], "w3": ["nobody"]},
}
CHAIN_MAPPING = {"src": "w1", "parse": "w1", "cep": "w2", "annotate": "w3", "sink": "w3"}


# scheduling instances -----------------------------------------------------------------


def random_instance(rng: random.Random, max_procs: int = 6, max_workers: int = 4):
    from echoflow.master import ResourceView, WorkerView

    n, m = rng.randint(1, max_procs), rng.randint(1, max_workers)
    tag_pool = ("gpu", "camera")
    procs = []
    for i in range(n):
        cons = [t for t in tag_pool if rng.random() < 0.15]
        if rng.random() < 0.2:
            cons.append(rng.choice(("edge", "cloud")))
        procs.append(ProcessorSpec(f"p{i}", "builtin:identity",
                                   demands=ResourceDemand(rng.choice((0, 250, 500, 1000, 2000)), rng.choice((0, 128, 512))),
                                   constraints=tuple(cons)))
    edges = {(f"p{rng.randrange(n)}", f"p{rng.randrange(1, n)}") for _ in range(rng.randint(0, n))} if n > 1 else set()
    spec = DataflowSpec("s", tuple(procs), tuple(EdgeSpec(a, b) for a, b in sorted(edges) if b != "p0"))
    workers = {}
    for j in range(m):
        cls = rng.choice(("edge", "fog", "cloud"))
        cpu, mem = rng.choice((1000, 2000, 4000)), rng.choice((512, 1024))
        workers[f"w{j}"] = WorkerView(f"w{j}", f"d{j}", cls, cpu, mem,
                                      tags=frozenset({cls} | {t for t in tag_pool if rng.random() < 0.3}),
                                      used_cpu=rng.choice((0, 0, 500)), available=rng.random() > 0.1)
    return spec, ResourceView(workers)


def oracle_sound(spec, view, mapping) -> bool:
    """Direct capacity/tag/totality check, written independently of the validator."""
    if sorted(mapping) != sorted(p.id for p in spec.processors):
        return False
    for wid, w in view.workers.items():
        placed = [p for p in spec.processors if mapping[p.id] == wid]
        if placed and not w.available:
            return False
        if sum(p.demands.cpu_millis for p in placed) > w.cpu_millis - w.used_cpu:
            return False
        if sum(p.demands.mem_mb for p in placed) > w.mem_mb - w.used_mem:
            return False
        if any(not set(p.constraints) <= w.tags for p in placed):
            return False
    return all(m in view.workers for m in mapping.values())


def exhaustive_feasible(spec, view) -> bool:
    import itertools

    ids = [p.id for p in spec.processors]
    return any(oracle_sound(spec, view, dict(zip(ids, combo)))
               for combo in itertools.product(sorted(view.workers), repeat=len(ids)))
