from __future__ import annotations

import json
import random
import tempfile
import time
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from echoflow.common import free_port
from echoflow.databatch import DataBatch, EventTuple, batch_to_file, batch_to_stream, file_to_batch, tuples_to_batch
from echoflow.flowmodel import processor_from_json
from echoflow.serving import ServerThread
from echoflow.stubs import echo_engine
from echoflow.wrappers import (
    ExecFailed,
    ExecSpec,
    ProcessorConfigError,
    ProcessorContext,
    UnknownKind,
    cep_process,
    exec_process,
    instantiate,
    parse_query,
)
from echoflow.wrappers.senml import record_line, write_taxi_file

from helpers import proc, random_events

STUBS = Path(echo_engine.__file__).parent


def values(ts):
    return [t.value for t in ts]


def vs(*xs):
    return [EventTuple("s", x, "", i) for i, x in enumerate(xs)]


def make(kind, tmp_path, i="microbatch", o="microbatch", errors=None, **config):
    spec = processor_from_json(proc("p", kind, i, o, config=config))
    ctx = ProcessorContext("p", "df", tmp_path, device="dev", error=(errors.append if errors is not None else lambda m: None))
    logic = instantiate(spec, ctx)
    logic.open()
    return logic


def drive(logic, items):
    out = []
    for item in items:
        logic.on_item(item, out.append)
    logic.on_close(out.append)
    return out


# CEP ---------------------------------------------------------------------------------


def test_filter_keeps_matching():
    assert values(cep_process([{"op": "filter", "field": "v", "cmp": ">", "value": 5}], vs(3, 7, 4, 9))) == [7, 9]


def test_window_avg_full_windows_only():
    q = [{"op": "window_agg", "n": 4, "agg": "avg"}]
    assert values(cep_process(q, vs(*range(1, 9)))) == [2.5, 6.5]
    assert values(cep_process(q, vs(*range(1, 11)))) == [2.5, 6.5]


def test_scale_and_chain():
    q = [{"op": "scale", "factor": 2, "offset": 1}, {"op": "filter", "field": "v", "cmp": ">=", "value": 7}]
    assert values(cep_process(q, vs(1, 3, 4))) == [7, 9]


def test_people_per_frame_alert():
    q = [{"op": "pattern_count", "predicate": {"field": "n", "cmp": "==", "value": "person"},
          "n": 1, "k": 5, "group_by": "u"}]
    frames = {"f1": ["person"] * 5 + ["car"], "f2": ["person"] * 4 + ["car"] * 3, "f3": ["person"] * 7}
    dets = [EventTuple(label, 0.9, frame, 0) for frame, labels in frames.items() for label in labels]
    alerts = cep_process(q, dets)
    assert [(a.unit, a.value) for a in alerts] == [("f1", 5), ("f3", 7)]


def test_sliding_pattern_count():
    q = [{"op": "pattern_count", "predicate": {"field": "v", "cmp": ">", "value": 0}, "n": 3, "k": 2}]
    assert len(cep_process(q, vs(1, 0, 1, 1, 0, 0, 0))) == 2


def test_missing_field_dropped_and_counted(tmp_path):
    errors = []
    logic = make("cep", tmp_path, "stream", "stream", errors,
                 query=[{"op": "filter", "field": "colour", "cmp": "==", "value": 1}])
    assert drive(logic, vs(1, 2)) == []
    assert logic.metrics()["cep_errors"] == 2 and len(errors) == 2


@pytest.mark.parametrize("query", [[], [{"op": "median"}], [{"op": "window_agg", "n": 0, "agg": "avg"}],
                                   [{"op": "filter", "field": "", "cmp": ">", "value": 1}],
                                   [{"op": "filter", "field": "v", "cmp": "~", "value": 1}]])
def test_bad_queries_rejected(query):
    with pytest.raises(ProcessorConfigError):
        parse_query(query)


def oracle_pipeline(xs, threshold, n, agg):
    kept = [x for x in xs if x >= threshold]
    fns = {"avg": lambda w: sum(w) / len(w), "min": min, "max": max, "sum": sum, "count": len}
    return [fns[agg](kept[i:i + n]) for i in range(0, len(kept) - len(kept) % n, n)]


@given(st.lists(st.integers(-100, 100), max_size=300), st.integers(-50, 50), st.integers(1, 20),
       st.sampled_from(["avg", "min", "max", "sum", "count"]))
def test_cep_matches_oracle_and_is_deterministic(xs, threshold, n, agg):
    q = [{"op": "filter", "field": "v", "cmp": ">=", "value": threshold}, {"op": "window_agg", "n": n, "agg": agg}]
    out = values(cep_process(q, vs(*xs)))
    assert out == pytest.approx(oracle_pipeline(xs, threshold, n, agg))
    assert values(cep_process(q, vs(*xs))) == out
    kept = sum(x >= threshold for x in xs)
    assert len(out) == kept // n


# exec --------------------------------------------------------------------------------


def stub(name):
    return {"command": "{python}", "args": [str(STUBS / f"{name}.py"), "{input_file}", "{output_file}"]}


def test_exec_linecount(tmp_path):
    out = exec_process(ExecSpec.from_config(stub("linecount")), tuples_to_batch(vs(1, 2, 3, 4)), tmp_path)
    assert out.content == b"4"


def test_exec_copy_is_identity_and_keeps_attributes(tmp_path):
    b = DataBatch.create(bytes(range(256)), 0, camera="c1")
    out = exec_process(ExecSpec.from_config(stub("copy")), b, tmp_path)
    assert out.content == b.content and out.attributes["camera"] == "c1"
    assert list(tmp_path.iterdir()) == []


def test_exec_failure_and_timeout(tmp_path):
    failing = dict(stub("copy"), env={"COPY_EXIT": "1"})
    with pytest.raises(ExecFailed, match="exited 1"):
        exec_process(ExecSpec.from_config(failing), DataBatch.create(b"x"), tmp_path)
    slow = {"command": "{python}", "args": ["-c", "import time; time.sleep(5)"], "timeout_ms": 200}
    t = time.monotonic()
    with pytest.raises(ExecFailed, match="timed out"):
        exec_process(ExecSpec.from_config(slow), DataBatch.create(b"x"), tmp_path)
    assert time.monotonic() - t < 3
    assert list(tmp_path.iterdir()) == []


def test_exec_processor_detector(tmp_path):
    logic = make("exec", tmp_path, "file", "file", **stub("detector"))
    (tmp_path / "in").mkdir()
    header = json.dumps({"frame": "f1", "people": 6, "cars": 1}).encode()
    frame = batch_to_file(DataBatch.create(header + b"\n\0\0", 0, camera="c1"), tmp_path / "in")
    out = []
    # the engine reads an emitted file during emit; the processor may reclaim it afterwards
    logic.on_item(frame, lambda ref: out.append(file_to_batch(ref)))
    (batch,) = out
    assert batch.count == 7 and batch.attributes["camera"] == "c1"
    assert Counter(t.name for t in batch_to_stream(batch)) == {"person": 6, "car": 1}
    assert logic.metrics()["runs"] == 1
    assert [p.name for p in tmp_path.iterdir()] == ["in"]


def test_exec_missing_command_fails_at_open(tmp_path):
    with pytest.raises(ProcessorConfigError, match="not found"):
        make("exec", tmp_path, "file", "file", command="/no/such/binary")


def test_exec_leaves_no_temp_files_in_system_tmp(tmp_path):
    before = set(Path(tempfile.gettempdir()).glob("echo-exec-*"))
    for _ in range(3):
        exec_process(ExecSpec.from_config(stub("linecount")), tuples_to_batch(vs(1)))
    assert set(Path(tempfile.gettempdir()).glob("echo-exec-*")) == before


# bridge ------------------------------------------------------------------------------


def run_bridge(tmp_path, url, batches, mode_expect_timeout=20.0):
    logic = make("bridge", tmp_path, endpoint=url)
    out = []
    try:
        for b in batches:
            logic.on_item(b, out.append)
        deadline = time.monotonic() + mode_expect_timeout
        while len(out) < len(batches) and time.monotonic() < deadline:
            logic.poll(out.append)
            time.sleep(0.05)
    finally:
        logic.close()
    return out


@pytest.fixture
def echo_server():
    servers = []

    def start(mode="echo", port=0):
        srv = ServerThread(echo_engine.create_app(echo_engine.EchoEngine(mode)), port=port).start()
        servers.append(srv)
        return srv

    yield start
    for s in servers:
        s.stop()


def test_bridge_echo_conserves_multiset(tmp_path, echo_server):
    srv = echo_server()
    rng = random.Random(3)
    batches = [tuples_to_batch(random_events(rng, rng.randint(1, 20))) for _ in range(40)]
    out = run_bridge(tmp_path, srv.url, batches)
    assert Counter((b.id, b.content) for b in out) == Counter((b.id, b.content) for b in batches)


def test_bridge_doubling_remote(tmp_path, echo_server):
    srv = echo_server("double")
    out = run_bridge(tmp_path, srv.url, [tuples_to_batch(vs(1, 2.5, -3))])
    assert values(batch_to_stream(out[0])) == [2, 5.0, -6]


def test_bridge_remote_down_then_recovers(tmp_path, echo_server):
    port = free_port()
    url = f"http://127.0.0.1:{port}"
    logic = make("bridge", tmp_path, endpoint=url)
    out = []
    batches = [tuples_to_batch(vs(i)) for i in range(10)]
    try:
        for b in batches:
            logic.on_item(b, out.append)
        time.sleep(1.0)
        logic.poll(out.append)
        assert out == [] and logic.metrics()["outbox"] > 0
        echo_server(port=port)
        deadline = time.monotonic() + 30
        while len(out) < 10 and time.monotonic() < deadline:
            logic.poll(out.append)
            time.sleep(0.1)
    finally:
        logic.close()
    assert sorted(b.id for b in out) == sorted(b.id for b in batches)


def test_bridge_needs_distinct_links(tmp_path):
    with pytest.raises(ProcessorConfigError):
        make("bridge", tmp_path, endpoint="http://x", ingress="a", egress="a")


# builtins ----------------------------------------------------------------------------


def test_annotate_sets_attribute(tmp_path):
    out = drive(make("builtin:annotate", tmp_path, key="stage", val="clean"), [DataBatch.create(b"", 0)] * 3)
    assert [b.attributes["stage"] for b in out] == ["clean"] * 3


def test_parse_skips_malformed_record(tmp_path):
    errors = []
    lines = [record_line([EventTuple("s", i)]) for i in range(9)]
    lines.insert(4, '{"bn":"x","e":[{"n":"a","v":"NaN?"}]}')
    logic = make("builtin:parse_senml", tmp_path, "microbatch", "stream", errors)
    out = drive(logic, [DataBatch.create("\n".join(lines).encode(), 0)])
    sink = make("builtin:sink_count", tmp_path)
    drive(sink, [tuples_to_batch(out)])
    assert sink.metrics()["total_tuples"] == 9 and len(errors) == 1


def test_unknown_kind_and_model_mismatch(tmp_path):
    with pytest.raises(UnknownKind):
        make("builtin:nosuch", tmp_path)
    with pytest.raises(ProcessorConfigError, match="input model"):
        make("cep", tmp_path, "microbatch", "stream", query=[{"op": "scale"}])


def test_source_unreadable_file(tmp_path):
    with pytest.raises(ProcessorConfigError, match="cannot read"):
        make("builtin:source_replay", tmp_path, file=str(tmp_path / "absent"))


def test_source_replay_rate(tmp_path):
    path = write_taxi_file(tmp_path / "in.senml", 1000)
    logic = make("builtin:source_replay", tmp_path, "microbatch", "stream", file=str(path), rate=100)
    out = []
    t0 = time.monotonic()
    while not logic.finished:
        wait = logic.poll(out.append)
        time.sleep(min(wait or 0.0, 0.05))
    elapsed = time.monotonic() - t0
    sink = make("builtin:sink_count", tmp_path)
    drive(sink, [tuples_to_batch(out)])
    assert sink.metrics()["total_tuples"] == 1000
    assert 9.0 <= elapsed <= 11.0


def test_sink_file_writes_content_and_log(tmp_path):
    sink = make("builtin:sink_file", tmp_path, path=str(tmp_path / "out.bin"))
    b = tuples_to_batch(vs(1, 2))
    drive(sink, [b])
    assert (tmp_path / "out.bin").read_bytes() == b.content
    lines = (tmp_path / "out.bin.log").read_text().splitlines()
    assert lines[0].split("\t")[1:] == ["2", b.id] and lines[-1].split("\t")[1] == "EOS"
