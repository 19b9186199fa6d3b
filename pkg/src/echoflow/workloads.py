"""Dataflow specs used by the benchmarks and integration tests."""

from __future__ import annotations

from pathlib import Path

# Per-tuple cost of the ETL transforms. On an edge-throttled 4000m worker
# this caps each transform at roughly 15 tuples/s; unthrottled workers are not capped.
ETL_WORK_US = 26667


def _proc(pid: str, kind: str, i: str, o: str, cpu: int, mem: int = 128, config=None, constraints=()) -> dict:
    d = {
        "id": pid,
        "kind": kind,
        "input_model": i,
        "output_model": o,
        "config": dict(config or {}),
        "demands": {"cpu_millis": cpu, "mem_mb": mem},
    }
    if constraints:
        d["constraints"] = list(constraints)
    return d


def _edges(*pairs: tuple[str, str]) -> list[dict]:
    return [{"from": a, "to": b} for a, b in pairs]


def etl_dataflow(input_file: str | Path, outdir: str | Path, records: int, rate: float = 80.0) -> dict:
    """Source on an edge device, three CPU-heavy transforms, an archive sink and a publish sink."""
    out = Path(outdir)
    work = {"work_us_per_tuple": ETL_WORK_US}
    return {
        "name": "etl",
        "qos": {"prefer_class": "cloud"},
        "processors": [
            _proc("src", "builtin:source_replay", "microbatch", "microbatch", 2000,
                  config={"file": str(input_file), "rate": rate, "batch_records": 8, "limit": records},
                  constraints=["edge"]),
            _proc("parse", "builtin:parse_senml", "microbatch", "stream", 2500,
                  config=dict(work, window={"mode": "count", "count_n": 8})),
            _proc("cep", "cep", "stream", "stream", 2500,
                  config=dict(work, query=[{"op": "scale", "field": "v", "factor": 1.0}],
                              window={"mode": "count", "count_n": 10})),
            _proc("annotate", "builtin:annotate", "microbatch", "microbatch", 2500,
                  config=dict(work, key="stage", val="clean")),
            _proc("archive", "builtin:sink_file", "microbatch", "microbatch", 1000,
                  config={"path": str(out / "archive.out")}),
            _proc("publish", "builtin:sink_count", "microbatch", "microbatch", 1000,
                  config={"log": str(out / "publish.log")}),
        ],
        "edges": _edges(("src", "parse"), ("parse", "cep"), ("cep", "annotate"),
                        ("annotate", "archive"), ("annotate", "publish")),
    }


def stats_dataflow(input_file: str | Path, outdir: str | Path, records: int, rate: float, echo_url: str) -> dict:
    """Parallel filter, aggregate and count branches plus a bridge through a remote engine."""
    out = Path(outdir)
    cloud = ["cloud"]
    return {
        "name": "stats",
        "processors": [
            _proc("src", "builtin:source_replay", "microbatch", "microbatch", 500,
                  config={"file": str(input_file), "rate": rate, "batch_records": 50, "limit": records},
                  constraints=cloud),
            _proc("parse", "builtin:parse_senml", "microbatch", "stream", 500,
                  config={"window": {"mode": "count", "count_n": 50}}, constraints=cloud),
            _proc("filter", "cep", "stream", "stream", 500,
                  config={"query": [{"op": "filter", "field": "v", "cmp": ">=", "value": 50}],
                          "window": {"mode": "count", "count_n": 50}}, constraints=cloud),
            _proc("aggregate", "cep", "stream", "stream", 500,
                  config={"query": [{"op": "window_agg", "n": 10, "agg": "avg"}],
                          "window": {"mode": "count", "count_n": 10}}, constraints=cloud),
            _proc("count", "builtin:distinct_count", "stream", "stream", 500,
                  config={"every": 100, "window": {"mode": "count", "count_n": 5}}, constraints=cloud),
            _proc("bridge", "bridge", "microbatch", "microbatch", 500,
                  config={"endpoint": echo_url}, constraints=cloud),
            _proc("sink", "builtin:sink_count", "microbatch", "microbatch", 250,
                  config={"log": str(out / "sink.log")}, constraints=cloud),
            _proc("filtered", "builtin:sink_count", "microbatch", "microbatch", 250,
                  config={"log": str(out / "filtered.log")}, constraints=cloud),
            _proc("averages", "builtin:sink_count", "microbatch", "microbatch", 250,
                  config={"log": str(out / "averages.log")}, constraints=cloud),
            _proc("counts", "builtin:sink_count", "microbatch", "microbatch", 250,
                  config={"log": str(out / "counts.log")}, constraints=cloud),
        ],
        "edges": _edges(("src", "parse"), ("parse", "bridge"), ("bridge", "sink"),
                        ("parse", "filter"), ("filter", "filtered"),
                        ("parse", "aggregate"), ("aggregate", "averages"),
                        ("parse", "count"), ("count", "counts")),
    }


def firewall_dataflow(input_file: str | Path, outdir: str | Path, records: int) -> dict:
    """edge -> cloud -> edge: the return hop must be pulled by the edge side."""
    out = Path(outdir)
    return {
        "name": "firewall",
        "processors": [
            _proc("src", "builtin:source_replay", "microbatch", "microbatch", 1000,
                  config={"file": str(input_file), "rate": 0, "batch_records": 20, "limit": records},
                  constraints=["edge"]),
            _proc("parse", "builtin:parse_senml", "microbatch", "stream", 1000,
                  config={"window": {"mode": "count", "count_n": 25}}, constraints=["cloud"]),
            _proc("sink", "builtin:sink_count", "microbatch", "microbatch", 1000,
                  config={"log": str(out / "sink.log")}, constraints=["edge"]),
        ],
        "edges": _edges(("src", "parse"), ("parse", "sink")),
    }
