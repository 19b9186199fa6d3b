from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from echoflow.flowmodel import DataflowSpec, EdgeSpec, ProcessorSpec, ResourceDemand
from echoflow.master import Infeasible, ResourceView, WorkerView, first_fit, validate_mapping

from helpers import exhaustive_feasible, oracle_sound, random_instance


def chain(*demands, constraints=None, qos=None) -> DataflowSpec:
    procs = tuple(ProcessorSpec(f"P{i + 1}", "builtin:identity", demands=ResourceDemand(cpu, 0),
                                constraints=tuple((constraints or {}).get(i, ())))
                  for i, cpu in enumerate(demands))
    edges = tuple(EdgeSpec(f"P{i}", f"P{i + 1}") for i in range(1, len(demands)))
    return DataflowSpec("c", procs, edges, qos or {})


def view(*workers) -> ResourceView:
    return ResourceView({w.id: w for w in workers})


def w(wid, cpu, cls="edge", tags=(), **kw) -> WorkerView:
    return WorkerView(wid, wid, cls, cpu, 4096, tags=frozenset({cls, *tags}), **kw)


def test_first_fit_forced_order():
    assert first_fit(chain(2000, 1000, 1000), view(w("r1", 2000), w("r2", 2000))) == {"P1": "r1", "P2": "r2", "P3": "r2"}


def test_zero_demands_share_first_worker():
    assert set(first_fit(chain(0, 0, 0), view(w("r1", 10), w("r2", 10))).values()) == {"r1"}


def test_cloud_last_unless_preferred():
    v = view(w("a-cloud", 8000, "cloud"), w("z-edge", 8000))
    assert first_fit(chain(100), v) == {"P1": "z-edge"}
    assert first_fit(chain(100, qos={"prefer_class": "cloud"}), v) == {"P1": "a-cloud"}


def test_missing_tag_is_infeasible_with_reason():
    with pytest.raises(Infeasible, match="gpu"):
        first_fit(chain(100, constraints={0: ["gpu"]}), view(w("r1", 4000)))


def test_capacity_shortfall_reason():
    with pytest.raises(Infeasible, match="needs 5000m"):
        first_fit(chain(5000), view(w("r1", 4000)))


def test_stale_workers_skipped():
    assert first_fit(chain(100), view(w("r1", 4000, available=False), w("r2", 4000))) == {"P1": "r2"}


def test_current_mapping_kept_when_feasible():
    v = view(w("r1", 4000), w("r2", 4000))
    assert first_fit(chain(1000, 1000), v, current={"P1": "r2", "P2": "r2"}) == {"P1": "r2", "P2": "r2"}


def test_preferred_class_pulls_processors_off_current():
    v = view(w("e1", 4000), w("c1", 8000, "cloud"))
    spec = chain(1000, 1000, qos={"prefer_class": "cloud"})
    assert first_fit(spec, v, current={"P1": "e1", "P2": "e1"}) == {"P1": "c1", "P2": "c1"}


def test_validator_flags_every_kind_of_violation():
    spec = chain(3000, 3000, constraints={1: ["gpu"]})
    v = view(w("r1", 4000), w("r2", 4000, available=False))
    problems = validate_mapping(spec, v, {"P1": "r1", "P2": "r1"})
    assert any("over capacity" in p for p in problems) and any("gpu" in p for p in problems)
    assert any("not total" in p for p in validate_mapping(spec, v, {"P1": "r1"}))
    assert any("unavailable" in p for p in validate_mapping(chain(1), v, {"P1": "r2"}))
    assert any("unknown worker" in p for p in validate_mapping(chain(1), v, {"P1": "nope"}))


@given(st.integers(0, 2**32 - 1))
def test_first_fit_sound_against_exhaustive_oracle(seed):
    spec, v = random_instance(random.Random(seed))
    feasible = exhaustive_feasible(spec, v)
    try:
        mapping = first_fit(spec, v)
    except Infeasible:
        return  # first fit may miss a packing; it must never accept an unsound one
    assert feasible
    assert oracle_sound(spec, v, mapping)
    assert validate_mapping(spec, v, mapping) == []
