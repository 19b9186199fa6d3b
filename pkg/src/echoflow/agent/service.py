"""Device service: registration, worker sandboxes, utilization monitoring."""

from __future__ import annotations

import logging
import os
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx
import psutil

from ..catalog import CatalogClient, CatalogItem, CatalogUnavailable, make_item
from ..common import free_port, heartbeat_ms, now_iso, parse_listen, url_for
from ..engine.throttle import PROFILES
from .config import Caps, DeviceConfig

log = logging.getLogger(__name__)

HEALTH_TIMEOUT_S = 10.0
STARTING, UP, DOWN = "starting", "up", "down"


class AgentError(RuntimeError):
    status = 400


class DuplicateDevice(AgentError):
    status = 409


class InsufficientCapacity(AgentError):
    status = 409


class SpawnFailed(AgentError):
    status = 502


class UnknownWorker(AgentError):
    status = 404


class Handle(Protocol):
    pid: int

    def poll(self) -> int | None: ...
    def terminate(self) -> None: ...
    def kill(self) -> None: ...
    def wait(self, timeout: float | None = None) -> int: ...


class Launcher(Protocol):
    def launch(self, worker_id: str, host: str, port: int, caps: Caps, profile: str) -> Handle: ...
    def healthy(self, endpoint: str) -> bool: ...


class ProcessLauncher:
    """Starts worker engines as child OS processes."""

    def __init__(self, config: DeviceConfig, workdir: Path, metrics_interval_ms: int | None = None):
        self.config = config
        self.workdir = workdir
        self.metrics_interval_ms = metrics_interval_ms

    def launch(self, worker_id: str, host: str, port: int, caps: Caps, profile: str) -> Handle:
        wdir = self.workdir / worker_id
        wdir.mkdir(parents=True, exist_ok=True)
        cmd = [
            sys.executable, "-m", "echoflow.engine.server",
            "--listen", f"{host}:{port}",
            "--worker-id", worker_id,
            "--device", self.config.id,
            "--cpu-millis", str(caps.cpu_millis),
            "--mem-mb", str(caps.mem_mb),
            "--profile", profile,
            "--catalog", self.config.catalog_url,
            "--reachable-from", ",".join(self.config.reachable_from),
            "--workdir", str(wdir / "data"),
        ]
        if self.metrics_interval_ms:
            cmd += ["--metrics-interval-ms", str(self.metrics_interval_ms)]
        logf = open(wdir / "engine.log", "ab")
        try:
            return subprocess.Popen(cmd, stdout=logf, stderr=subprocess.STDOUT, stdin=subprocess.DEVNULL)
        finally:
            logf.close()

    def healthy(self, endpoint: str) -> bool:
        try:
            return httpx.get(f"{endpoint}/health", timeout=1.0).status_code == 200
        except httpx.HTTPError:
            return False


@dataclass
class WorkerSandbox:
    worker_id: str
    device: str
    caps: Caps
    profile: str
    endpoint: str
    handle: Handle | None = None
    state: str = STARTING
    started: str = field(default_factory=now_iso)

    def to_json(self) -> dict:
        return {
            "worker_id": self.worker_id,
            "device": self.device,
            "caps": self.caps.to_json(),
            "profile": self.profile,
            "endpoint": self.endpoint,
            "state": self.state,
            "pid": getattr(self.handle, "pid", None),
            "started": self.started,
        }


class DeviceService:
    def __init__(
        self,
        config: DeviceConfig,
        catalog: CatalogClient | None = None,
        launcher: Launcher | None = None,
        endpoint: str | None = None,
        heartbeat_s: float | None = None,
        workdir: str | None = None,
    ):
        self.config = config
        self.catalog = catalog or CatalogClient(config.catalog_url)
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix=f"agent-{config.id}-"))
        self.launcher = launcher or ProcessLauncher(config, self.workdir)
        host, port = parse_listen(config.listen, 8710)
        self.host = host
        self.endpoint = endpoint or url_for(host, port)
        self.heartbeat_s = heartbeat_s if heartbeat_s is not None else heartbeat_ms() / 1000.0
        self.workers: dict[str, WorkerSandbox] = {}
        self._seq = 0
        self._lock = threading.Lock()  # serializes spawn/terminate so capacity checks are atomic
        self._halt = threading.Event()
        self._monitor: threading.Thread | None = None
        self._procs: dict[str, psutil.Process] = {}

    # capacity ---------------------------------------------------------------------

    def allotted(self) -> Caps:
        live = [w for w in self.workers.values() if w.state != DOWN]
        return Caps(sum(w.caps.cpu_millis for w in live), sum(w.caps.mem_mb for w in live))

    def headroom(self) -> Caps:
        used = self.allotted()
        cap = self.config.capacity
        return Caps(cap.cpu_millis - used.cpu_millis, cap.mem_mb - used.mem_mb)

    # registration ---------------------------------------------------------------------

    def _device_item(self) -> CatalogItem:
        c = self.config
        return make_item(
            f"/device/{c.id}",
            {
                "class": c.device_class,
                "cpuMillis": str(c.capacity.cpu_millis),
                "memMb": str(c.capacity.mem_mb),
                "cores": str(max(1, c.capacity.cpu_millis // 1000)),
                "visibility": c.visibility,
                "reachableFrom": list(c.reachable_from),
                "accelerators": list(c.accelerators),
                "profile": c.profile,
                "endpoint": self.endpoint,
            },
        )

    def bootstrap(self, retry_s: float = 0.5, deadline_s: float | None = None) -> CatalogItem:
        """Register the device, waiting for the catalog if needed."""
        t0 = time.monotonic()
        while True:
            try:
                existing = self.catalog.get(f"/device/{self.config.id}")
                break
            except CatalogUnavailable as exc:
                if deadline_s is not None and time.monotonic() - t0 > deadline_s:
                    raise AgentError(f"catalog never became reachable: {exc}") from exc
                log.info("catalog not reachable yet, retrying")
                time.sleep(retry_s)
        if existing is not None and not existing.stale and existing.get("state") != "down":
            raise DuplicateDevice(f"device {self.config.id} is already registered and live")
        item = self.catalog.register(self._device_item())
        self._monitor = threading.Thread(target=self._monitor_loop, daemon=True, name="monitor")
        self._monitor.start()
        return item

    def _worker_item(self, w: WorkerSandbox, state: str | None = None, stale: bool = False) -> CatalogItem:
        c = self.config
        values = {
            "device": c.id,
            "class": c.device_class,
            "tags": c.tags,
            "cpuMillis": str(w.caps.cpu_millis),
            "memMb": str(w.caps.mem_mb),
            "profile": w.profile,
            "endpoint": w.endpoint,
            "reachableFrom": list(c.reachable_from),
            "visibility": c.visibility,
            "state": state or w.state,
            "started": w.started,
        }
        if stale:
            values["stale"] = "true"
        return make_item(f"/worker/{w.worker_id}", values)

    def _safe_register(self, item: CatalogItem) -> None:
        try:
            self.catalog.register(item)
        except CatalogUnavailable as exc:
            log.debug("catalog write skipped: %s", exc)

    # workers --------------------------------------------------------------------------

    def spawn_worker(self, caps: Caps, profile: str | None = None) -> WorkerSandbox:
        profile = profile or self.config.profile
        if profile not in PROFILES:
            raise AgentError(f"unknown profile {profile!r}")
        with self._lock:
            room = self.headroom()
            if caps.cpu_millis > room.cpu_millis or caps.mem_mb > room.mem_mb:
                raise InsufficientCapacity(
                    f"insufficient capacity on {self.config.id}: requested {caps.cpu_millis}m/{caps.mem_mb}MB, "
                    f"remaining headroom {room.cpu_millis}m/{room.mem_mb}MB"
                )
            self._seq += 1
            wid = f"{self.config.id}-w{self._seq}"
            port = free_port(self.host)
            w = WorkerSandbox(wid, self.config.id, caps, profile, url_for(self.host, port))
            self.workers[wid] = w
            try:
                w.handle = self.launcher.launch(wid, self.host, port, caps, profile)
                deadline = time.monotonic() + HEALTH_TIMEOUT_S
                while not self.launcher.healthy(w.endpoint):
                    if time.monotonic() > deadline or w.handle.poll() is not None:
                        raise SpawnFailed(f"worker {wid} failed its health check within {HEALTH_TIMEOUT_S:.0f}s")
                    time.sleep(0.05)
            except Exception:
                self.workers.pop(wid, None)
                if w.handle is not None and w.handle.poll() is None:
                    w.handle.kill()
                    w.handle.wait(5)
                raise
            w.state = UP
        self._safe_register(self._worker_item(w))
        return w

    def terminate_worker(self, wid: str) -> None:
        with self._lock:
            w = self.workers.get(wid)
            if w is None:
                raise UnknownWorker(f"no worker {wid} on {self.config.id}")
            self._stop_process(w)
            del self.workers[wid]
            self._procs.pop(wid, None)
        try:
            for suffix in ("", "/metrics", "/CPUUtil", "/MemUtil"):
                self.catalog.delete(f"/worker/{wid}{suffix}")
            self.catalog.register(
                make_item(f"/device/{self.config.id}/workers/{wid}", {"started": w.started, "stopped": now_iso()})
            )
        except CatalogUnavailable as exc:
            log.warning("could not clean catalog entries for %s: %s", wid, exc)

    def _stop_process(self, w: WorkerSandbox) -> None:
        h = w.handle
        if h is None or h.poll() is not None:
            return
        try:
            # graceful: the engine undeploys its fragments before exiting
            httpx.post(f"{w.endpoint}/shutdown", timeout=2.0)
            h.wait(5)
            return
        except (httpx.HTTPError, subprocess.TimeoutExpired):
            pass
        h.terminate()
        try:
            h.wait(3)
        except subprocess.TimeoutExpired:
            h.kill()
            h.wait(3)

    # monitoring -------------------------------------------------------------------------

    def _cpu_mem(self, w: WorkerSandbox) -> tuple[float, float]:
        pid = getattr(w.handle, "pid", None)
        if not pid:
            return 0.0, 0.0
        proc = self._procs.get(w.worker_id)
        try:
            if proc is None:
                proc = self._procs[w.worker_id] = psutil.Process(pid)
                proc.cpu_percent(None)
                return 0.0, proc.memory_info().rss / 2**20
            return proc.cpu_percent(None), proc.memory_info().rss / 2**20
        except psutil.Error:
            return 0.0, 0.0

    def check_workers(self) -> list[str]:
        """One monitor tick; returns ids newly found down."""
        newly_down = []
        cap = self.config.capacity
        cpu_total = mem_total = 0.0
        for w in list(self.workers.values()):
            if w.state == DOWN:
                continue
            alive = w.handle is not None and w.handle.poll() is None and self.launcher.healthy(w.endpoint)
            if not alive:
                w.state = DOWN
                newly_down.append(w.worker_id)
                log.warning("worker %s is down", w.worker_id)
                self._safe_register(self._worker_item(w, DOWN, stale=True))
                continue
            cpu, mem = self._cpu_mem(w)
            cpu_total += cpu
            mem_total += mem
            share = max(w.caps.cpu_millis, 1) / 1000.0
            self._safe_register(self._worker_item(w))
            self._safe_register(make_item(f"/worker/{w.worker_id}/CPUUtil", {"value": f"{cpu / share:.2f}"}))
            self._safe_register(
                make_item(f"/worker/{w.worker_id}/MemUtil", {"value": f"{100 * mem / max(w.caps.mem_mb, 1):.2f}"})
            )
        dev = self.config.id
        self._safe_register(self._device_item())
        self._safe_register(make_item(f"/device/{dev}/CPUUtil", {"value": f"{cpu_total / (cap.cpu_millis / 1000.0):.2f}"}))
        self._safe_register(make_item(f"/device/{dev}/MemUtil", {"value": f"{100 * mem_total / cap.mem_mb:.2f}"}))
        return newly_down

    def _monitor_loop(self) -> None:
        while not self._halt.wait(self.heartbeat_s):
            try:
                self.check_workers()
            except Exception as exc:
                log.warning("monitor tick failed: %s", exc)

    # status / shutdown ------------------------------------------------------------------

    def status(self) -> dict:
        return {
            "device": {**self.config.to_json(), "endpoint": self.endpoint},
            "allotted": self.allotted().to_json(),
            "headroom": self.headroom().to_json(),
            "workers": [w.to_json() for w in self.workers.values()],
        }

    def shutdown(self) -> None:
        self._halt.set()
        for wid in list(self.workers):
            try:
                self.terminate_worker(wid)
            except AgentError:
                pass
        try:
            self.catalog.delete(f"/device/{self.config.id}")
        except CatalogUnavailable:
            pass


def default_workdir() -> str:
    return os.environ.get("ECHO_AGENT_WORKDIR") or tempfile.mkdtemp(prefix="echo-agent-")
