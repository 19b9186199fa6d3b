from __future__ import annotations

import os
import time

import pytest
from hypothesis import HealthCheck, settings

from echoflow.catalog import CatalogClient, CatalogStore, make_item
from echoflow.catalog.api import create_app as catalog_app
from echoflow.engine.api import create_app as engine_app
from echoflow.engine.fragment import Engine
from echoflow.serving import ServerThread

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def catalog_server():
    store = CatalogStore(heartbeat_ms=5000, watch_timeout=2.0)
    srv = ServerThread(catalog_app(store)).start()
    yield store, srv.url
    srv.stop()


@pytest.fixture
def catalog(catalog_server):
    _, url = catalog_server
    client = CatalogClient(url)
    yield client
    client.close()


class Cluster:
    """In-process engines behind real HTTP servers, registered as catalog workers."""

    def __init__(self, catalog: CatalogClient, tmp_path):
        self.catalog = catalog
        self.tmp_path = tmp_path
        self.engines: dict[str, Engine] = {}
        self.servers: dict[str, ServerThread] = {}

    def add(self, wid, cls="edge", cpu=4000, mem=1024, profile="unthrottled", device=None,
            reachable_from=("*",), tags=()) -> Engine:
        device = device or wid
        eng = Engine(wid, device, cpu, mem, profile, workdir=str(self.tmp_path / wid))
        srv = ServerThread(engine_app(eng, reachable_from=list(reachable_from))).start()
        self.engines[wid], self.servers[wid] = eng, srv
        self.catalog.register(make_item(f"/worker/{wid}", {
            "device": device, "class": cls, "tags": [cls, *tags], "cpuMillis": str(cpu), "memMb": str(mem),
            "endpoint": srv.url, "reachableFrom": list(reachable_from), "state": "up", "profile": profile,
        }))
        return eng

    def kill(self, wid):
        self.servers.pop(wid).stop()
        self.engines.pop(wid).shutdown()

    def close(self):
        for wid in list(self.servers):
            self.kill(wid)


@pytest.fixture
def cluster(catalog, tmp_path):
    c = Cluster(catalog, tmp_path)
    yield c
    c.close()


# acceptance reporting: one pass/fail line per criterion, repeated in the terminal summary

_CRITERIA = pytest.StashKey[list]()


class Criterion:
    def __init__(self, lines: list, number: int, title: str, budget_s: float):
        self.lines, self.number, self.title, self.budget_s = lines, number, title, budget_s
        self.detail = ""

    def __enter__(self) -> "Criterion":
        self.t0 = time.monotonic()
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        elapsed = time.monotonic() - self.t0
        over = elapsed > self.budget_s
        ok = exc_type is None and not over
        if exc_type is not None:
            first = str(exc).splitlines()[0] if str(exc) else ""
            why = f"{exc_type.__name__}: {first}"
        elif over:
            why = f"over the {self.budget_s:.0f}s budget"
        else:
            why = self.detail
        line = (f"criterion {self.number:>2} {'PASS' if ok else 'FAIL'}  {self.title}"
                f"  [{elapsed:.1f}s of {self.budget_s:.0f}s]  {why}")
        self.lines.append((self.number, line))
        print(line)
        if exc_type is None and over:
            raise AssertionError(line)
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(_CRITERIA, [])
    return lambda number, title, budget_s: Criterion(lines, number, title, budget_s)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
