from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from echoflow.flowmodel import (
    SCHEMA_PATH,
    DataflowValidationError,
    MappingError,
    UnschedulableLink,
    edge_cut,
    from_json,
    graph_diff,
    parse_and_validate,
    processor_from_json,
    topological_order,
)

from helpers import check_plan, flow, oracle_diff, proc, random_graph, random_mapping, random_reachability

ETL = flow(
    "etl",
    [proc("source", "builtin:source_replay", config={"file": "x"}), proc("parse", "builtin:parse_senml", o="stream"),
     proc("cep", "cep", i="stream", o="stream"), proc("annotate", "builtin:annotate"), proc("sink", "builtin:sink_count")],
    [("source", "parse"), ("parse", "cep"), ("cep", "annotate"), ("annotate", "sink")],
)


def abc(edges=(("A", "B"), ("B", "C"))):
    return from_json(flow("abc", [proc(p) for p in "ABC"], edges))


def violations(payload) -> list[str]:
    with pytest.raises(DataflowValidationError) as err:
        parse_and_validate(json.dumps(payload) if not isinstance(payload, (bytes, str)) else payload)
    return err.value.violations


def test_etl_shape_is_valid():
    spec = parse_and_validate(json.dumps(ETL).encode())
    assert len(spec.processors) == 5 and len(spec.edges) == 4


def test_dangling_edge_named():
    bad = flow("x", [proc("a")], [("a", "ghost")])
    assert "unknown processor ghost" in violations(bad)


def test_duplicate_id_named():
    bad = flow("x", [proc("a"), proc("a")], [])
    assert "duplicate id a" in violations(bad)


def test_missing_model_annotation():
    p = proc("a")
    del p["input_model"]
    assert any("input_model" in v for v in violations(flow("x", [p], [])))


def test_pure_cycle_rejected_but_cycle_with_source_allowed():
    assert any("no source" in v for v in violations(flow("x", [proc("a"), proc("b")], [("a", "b"), ("b", "a")])))
    spec = from_json(flow("x", [proc("s"), proc("a"), proc("b")], [("s", "a"), ("a", "b"), ("b", "a"), ("b", "b")]))
    assert len(spec.edges) == 4


def test_json_syntax_error():
    assert any("JSON syntax" in v for v in violations(b"{nope"))


def test_negative_demands_and_bad_kind():
    p = proc("a", kind="builtin:nosuch!", cpu=-1)
    v = violations(flow("x", [p], []))
    assert any("kind" in s for s in v) and any("cpu_millis" in s for s in v)


def test_processor_from_json():
    assert processor_from_json(proc("z", cpu=5)).demands.cpu_millis == 5
    with pytest.raises(DataflowValidationError):
        processor_from_json({"id": "z"})


def test_schema_file_accepts_etl_example():
    jsonschema = pytest.importorskip("jsonschema")
    jsonschema.validate(ETL, json.loads(SCHEMA_PATH.read_text()))


def test_edge_cut_examples():
    spec = abc()
    plan = edge_cut(spec, {"A": "r1", "B": "r1", "C": "r2"}, dataflow_id="df")
    (cut,) = plan.cut_edges
    assert (cut.src, cut.dst, cut.direction, cut.link_id) == ("B", "C", "push", "df-B-C")
    assert plan.fragments["r1"].processors == {"A", "B"} and plan.fragments["r2"].processors == {"C"}

    one = edge_cut(spec, dict.fromkeys("ABC", "r1"))
    assert one.cut_edges == [] and list(one.fragments) == ["r1"]

    pull = edge_cut(spec, {"A": "r1", "B": "r1", "C": "r2"}, lambda s, d: (s, d) == ("r2", "r1") or s == d)
    assert pull.cut_edges[0].direction == "pull"

    with pytest.raises(UnschedulableLink, match="B->C"):
        edge_cut(spec, {"A": "r1", "B": "r1", "C": "r2"}, lambda s, d: s == d)


def test_cycle_across_resources_warns():
    spec = from_json(flow("x", [proc("s"), proc("a"), proc("b")], [("s", "a"), ("a", "b"), ("b", "a")]))
    plan = edge_cut(spec, {"s": "r1", "a": "r1", "b": "r2"})
    assert plan.warnings and "cycle" in plan.warnings[0]


def test_graph_diff_examples():
    spec = abc()
    d = graph_diff(spec, {"A": "r1", "B": "r1", "C": "r1"}, {"A": "r1", "B": "r2", "C": "r1"})
    assert d.moved == {"B"} and d.affected == {"A", "B", "C"}
    same = {"A": "r1", "B": "r1", "C": "r1"}
    assert graph_diff(spec, same, same).empty
    with pytest.raises(MappingError):
        graph_diff(spec, same, {"A": "r1", "B": "r1"})


def test_topological_order_breaks_cycles_deterministically():
    spec = from_json(flow("x", [proc(p) for p in ("s", "b", "a")], [("s", "b"), ("b", "a"), ("a", "b")]))
    assert topological_order(spec) == ["s", "a", "b"]


@given(st.integers(0, 2**32 - 1))
def test_edge_cut_and_diff_match_oracles(seed):
    rng = random.Random(seed)
    spec = random_graph(rng, 50)
    reach = random_reachability(rng)
    mapping = random_mapping(rng, spec)
    try:
        plan = edge_cut(spec, mapping, reach, "df")
    except UnschedulableLink as exc:
        assert not reach(exc.src_res, exc.dst_res) and not reach(exc.dst_res, exc.src_res)
    else:
        assert check_plan(spec, mapping, plan, reach) == []
    new = random_mapping(rng, spec)
    d = graph_diff(spec, mapping, new)
    assert (set(d.moved), set(d.affected)) == oracle_diff(spec, mapping, new)
    assert graph_diff(spec, new, mapping).moved == d.moved
    assert graph_diff(spec, mapping, mapping).empty


@given(st.integers(0, 2**32 - 1))
def test_spec_json_round_trip(seed):
    spec = random_graph(random.Random(seed), 20)
    assert from_json(json.loads(spec.dumps())) == spec
