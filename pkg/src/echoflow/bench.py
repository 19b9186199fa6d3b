"""Benchmark harness: rebalance throughput and STATS-style sustained rate.

Each bench owns a testbed for its lifetime and writes report.json plus CSV
series into the output directory.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import httpx

from .testbed import Testbed, TestbedError
from .wrappers.senml import write_taxi_file
from .workloads import etl_dataflow, stats_dataflow

log = logging.getLogger(__name__)


class BenchError(RuntimeError):
    pass


@dataclass
class SinkLog:
    """Arrival log written by the sink processors: ``ts<TAB>count<TAB>batch_id`` per line."""

    arrivals: list[tuple[float, int, str]] = field(default_factory=list)
    closed: bool = False

    @classmethod
    def read(cls, path: str | Path) -> "SinkLog":
        out = cls()
        p = Path(path)
        if not p.exists():
            return out
        for line in p.read_text().splitlines():
            parts = line.split("\t")
            if len(parts) != 3:
                continue
            if parts[1] == "EOS":
                out.closed = True
                continue
            out.arrivals.append((float(parts[0]), int(parts[1]), parts[2]))
        return out

    @property
    def total(self) -> int:
        return sum(c for _, c, _ in self.arrivals)

    @property
    def duplicates(self) -> int:
        ids = [b for _, _, b in self.arrivals]
        return len(ids) - len(set(ids))

    def series(self, t0: float, seconds: int) -> list[int]:
        """Tuples per 1 s bucket, bucket i covering [t0+i, t0+i+1)."""
        buckets = [0] * seconds
        for ts, count, _ in self.arrivals:
            i = math.floor(ts - t0)
            if 0 <= i < seconds:
                buckets[i] += count
        return buckets


def mean_rate(series: list[int], start: float, end: float) -> float:
    lo, hi = max(0, math.ceil(start)), min(len(series), math.floor(end))
    if hi <= lo:
        return 0.0
    return sum(series[lo:hi]) / (hi - lo)


@dataclass
class RebalanceVerdicts:
    rate_before: float
    rate_after: float
    ratio: float
    speedup: bool
    dip: bool
    dip_bucket: int | None
    conservation: bool
    verdict: str
    failed: list[str]


def rebalance_verdicts(
    series: list[int],
    trigger_s: float | None,
    duration_s: int,
    expected: int,
    delivered: int,
    duplicates: int,
    min_ratio: float = 2.0,
) -> RebalanceVerdicts:
    """Steady-state windows: before = [5, T/2), after = [T/2 + 10, T)."""
    half = duration_s / 2
    before = mean_rate(series, 5, half)
    after = mean_rate(series, half + 10, duration_s)
    ratio = after / before if before > 0 else math.inf if after > 0 else 0.0
    conservation = delivered == expected and duplicates == 0
    if trigger_s is None:
        failed = [] if conservation else ["conservation"]
        return RebalanceVerdicts(before, after, ratio, False, False, None, conservation, "no-op baseline", failed)
    dip_bucket = None
    lo = max(0, math.floor(trigger_s))
    for i in range(lo, min(len(series), math.ceil(trigger_s + 10))):
        if series[i] < 0.8 * before:
            dip_bucket = i
            break
    speedup = ratio >= min_ratio
    failed = [name for name, ok in (("speedup", speedup), ("dip", dip_bucket is not None),
                                    ("conservation", conservation)) if not ok]
    return RebalanceVerdicts(before, after, ratio, speedup, dip_bucket is not None, dip_bucket, conservation,
                             "pass" if not failed else "fail", failed)


def _post(url: str, **kw) -> dict:
    resp = httpx.post(url, timeout=kw.pop("timeout", 60.0), **kw)
    if resp.status_code >= 400:
        raise BenchError(f"POST {url} -> {resp.status_code}: {resp.text}")
    return resp.json()


class CpuSampler(threading.Thread):
    """Polls per-worker CPUUtil items from the catalog once a second."""

    def __init__(self, testbed: Testbed, t0: float):
        super().__init__(daemon=True)
        self.testbed = testbed
        self.t0 = t0
        self.rows: list[tuple[float, str, float]] = []
        self._halt = threading.Event()

    def run(self) -> None:
        cat = self.testbed.catalog
        while not self._halt.wait(1.0):
            try:
                items = cat.query("/worker/")
            except Exception:
                continue
            now = time.time() - self.t0
            for item in items:
                parts = item.href.split("/")
                if len(parts) == 4 and parts[3] == "CPUUtil":
                    try:
                        self.rows.append((round(now, 1), parts[2], float(item.get("value", "0"))))
                    except ValueError:
                        pass

    def stop(self) -> None:
        self._halt.set()
        self.join(timeout=3)


def _write_series(path: Path, series: list[int]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["second", "tuples_per_s"])
        for i, v in enumerate(series):
            w.writerow([i, v])


def _write_cpu(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["second", "worker", "cpu_pct"])
        w.writerows(rows)


def _wait_closed(paths: list[Path], expected: int, timeout: float) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        logs = [SinkLog.read(p) for p in paths]
        if all(s.closed or s.total >= expected for s in logs):
            return
        time.sleep(1.0)


def run_rebalance(
    testbed_config: dict,
    outdir: str | Path,
    duration_s: int = 90,
    rate: float = 80.0,
    rebalance: bool = True,
    min_ratio: float = 2.0,
    drain_timeout: float = 120.0,
) -> dict:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    records = int(rate * duration_s)
    infile = write_taxi_file(out / "input.senml", records)
    for stale in ("archive.out", "archive.out.log", "publish.log"):
        (out / stale).unlink(missing_ok=True)
    spec = etl_dataflow(infile, out, records, rate)

    with Testbed(testbed_config, out / "testbed") as tb:
        master = tb.config.master_url
        uuid = _post(f"{master}/dataflows", json=spec)["uuid"]
        t0 = time.time()
        sampler = CpuSampler(tb, t0)
        sampler.start()
        before = httpx.get(f"{master}/dataflows/{uuid}", timeout=10).json()["mapping"]
        trigger_s = None
        result = None
        if rebalance:
            clouds = [d for d in tb.config.devices if d["class"] == "cloud"]
            time.sleep(max(0.0, t0 + duration_s / 2 - 8 - time.time()))
            for dev in clouds:
                caps = dev["capacity"]
                tb.spawn_worker(dev["id"], caps["cpu_millis"], caps["mem_mb"])
            time.sleep(max(0.0, t0 + duration_s / 2 - time.time()))
            trigger_s = time.time() - t0
            result = _post(f"{master}/dataflows/{uuid}/rebalance", timeout=120.0)
        time.sleep(max(0.0, t0 + duration_s - time.time()))
        logs = [out / "archive.out.log", out / "publish.log"]
        _wait_closed(logs, records, drain_timeout)
        sampler.stop()
        final = httpx.delete(f"{master}/dataflows/{uuid}", timeout=60).json()

    archive, publish = (SinkLog.read(p) for p in logs)
    series = archive.series(t0, duration_s)
    v = rebalance_verdicts(series, trigger_s, duration_s, records, archive.total, archive.duplicates, min_ratio)
    publish_ok = publish.total == records and publish.duplicates == 0
    if not publish_ok and "conservation" not in v.failed:
        v.conservation = False
        v.failed.append("conservation")
        v.verdict = "fail" if trigger_s is not None else v.verdict
    report = {
        "bench": "rebalance",
        "uuid": uuid,
        "duration_s": duration_s,
        "source_rate": rate,
        "source_tuples": records,
        "sink_tuples": {"archive": archive.total, "publish": publish.total},
        "duplicates": {"archive": archive.duplicates, "publish": publish.duplicates},
        "rebalance_at_s": trigger_s,
        "mapping_before": before,
        "mapping_after": result["mapping"] if result else before,
        "moved": result["moved"] if result else [],
        "stop": final,
        "rate_series": series,
        "verdicts": asdict(v),
    }
    _write_series(out / "rate.csv", series)
    _write_cpu(out / "cpu.csv", sampler.rows)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return report


def run_stats(
    testbed_config: dict,
    outdir: str | Path,
    duration_s: int = 60,
    rate: float = 1000.0,
    min_fraction: float = 0.9,
    drain_timeout: float = 60.0,
) -> dict:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    records = int(rate * duration_s)
    infile = write_taxi_file(out / "input.senml", records)
    sinks = ("sink", "filtered", "averages", "counts")
    for name in sinks:
        (out / f"{name}.log").unlink(missing_ok=True)

    with Testbed(testbed_config, out / "testbed") as tb:
        if not tb.config.echo_url:
            raise TestbedError("bench stats needs an 'echo' endpoint in the testbed config")
        for dev in tb.config.devices:
            if dev["class"] == "cloud" and not dev.get("workers"):
                caps = dev["capacity"]
                tb.spawn_worker(dev["id"], caps["cpu_millis"], caps["mem_mb"])
        spec = stats_dataflow(infile, out, records, rate, tb.config.echo_url)
        master = tb.config.master_url
        uuid = _post(f"{master}/dataflows", json=spec)["uuid"]
        t0 = time.time()
        sampler = CpuSampler(tb, t0)
        sampler.start()
        time.sleep(max(0.0, t0 + duration_s - time.time()))
        _wait_closed([out / "sink.log"], records, drain_timeout)
        detail = httpx.get(f"{master}/dataflows/{uuid}", timeout=10).json()
        sampler.stop()
        httpx.delete(f"{master}/dataflows/{uuid}", timeout=60)

    main = SinkLog.read(out / "sink.log")
    series = main.series(t0, duration_s)
    # first few seconds are start-up (deploy, first windows); steady state after that
    sustained = mean_rate(series, 5, duration_s)
    on_time = sum(series) / duration_s
    conservation = main.total == records and main.duplicates == 0
    sustained_ok = sustained >= min_fraction * rate
    failed = [n for n, ok in (("sustained_rate", sustained_ok), ("conservation", conservation)) if not ok]
    report = {
        "bench": "stats",
        "uuid": uuid,
        "duration_s": duration_s,
        "target_rate": rate,
        "source_tuples": records,
        "sink_tuples": main.total,
        "duplicates": main.duplicates,
        "sustained_rate": sustained,
        "mean_rate_incl_startup": on_time,
        "branch_tuples": {n: SinkLog.read(out / f"{n}.log").total for n in sinks[1:]},
        "task_rates": detail.get("metrics", {}).get("processors", {}),
        "rate_series": series,
        "verdicts": {
            "sustained_rate": sustained_ok,
            "conservation": conservation,
            "verdict": "pass" if not failed else "fail",
            "failed": failed,
        },
    }
    _write_series(out / "rate.csv", series)
    _write_cpu(out / "cpu.csv", sampler.rows)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return report
