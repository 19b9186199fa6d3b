"""Boots a simulated edge/cloud deployment on one host as a supervised process tree."""

from __future__ import annotations

import copy
import json
import logging
import os
import signal
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import httpx

from .agent.config import DeviceConfig
from .catalog import CatalogClient
from .common import free_port, parse_listen, port_in_use, url_for

log = logging.getLogger(__name__)

STATE_FILE = "testbed.json"


class TestbedError(RuntimeError):
    __test__ = False


class PortConflict(TestbedError):
    def __init__(self, port: int, what: str):
        super().__init__(f"port {port} needed by {what} is already in use")
        self.port = port


def builtin_config(name: str) -> Path:
    return Path(str(resources.files("echoflow") / "configs" / f"{name}.json"))


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = builtin_config(str(path))
    try:
        return json.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise TestbedError(f"cannot read testbed config {path}: {exc}") from None


def with_free_ports(config: dict) -> dict:
    """Same topology with every listen address moved to a free loopback port."""
    cfg = copy.deepcopy(config)
    for key in ("catalog", "master", "echo"):
        if key in cfg:
            cfg[key]["listen"] = f"127.0.0.1:{free_port()}"
    for dev in cfg["devices"]:
        dev["listen"] = f"127.0.0.1:{free_port()}"
    return cfg


@dataclass
class TestbedConfig:
    __test__ = False

    name: str
    catalog_listen: str
    master_listen: str
    echo_listen: str | None
    devices: list[dict]
    heartbeat_ms: int | None = None
    env: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.devices:
            raise TestbedError("testbed needs at least one device")
        listens = [self.catalog_listen, self.master_listen, *(d["listen"] for d in self.devices)]
        if self.echo_listen:
            listens.append(self.echo_listen)
        if len(set(listens)) != len(listens):
            raise TestbedError("testbed endpoints must be unique")
        ids = [d.get("id") for d in self.devices]
        if None in ids or len(set(ids)) != len(ids):
            raise TestbedError("every testbed device needs a unique id")
        for d in self.devices:
            DeviceConfig.from_json(d)

    @classmethod
    def from_json(cls, d: dict) -> "TestbedConfig":
        return cls(
            name=d.get("name", "testbed"),
            catalog_listen=d.get("catalog", {}).get("listen", "127.0.0.1:8700"),
            master_listen=d.get("master", {}).get("listen", "127.0.0.1:8800"),
            echo_listen=d.get("echo", {}).get("listen"),
            devices=list(d.get("devices", [])),
            heartbeat_ms=d.get("heartbeat_ms"),
            env=dict(d.get("env", {})),
        )

    @property
    def catalog_url(self) -> str:
        return url_for(*parse_listen(self.catalog_listen, 8700))

    @property
    def master_url(self) -> str:
        return url_for(*parse_listen(self.master_listen, 8800))

    @property
    def echo_url(self) -> str | None:
        return url_for(*parse_listen(self.echo_listen, 8790)) if self.echo_listen else None

    def agent_url(self, device_id: str) -> str:
        dev = next(d for d in self.devices if d["id"] == device_id)
        return url_for(*parse_listen(dev["listen"], 8710))


def _healthy(url: str) -> bool:
    try:
        return httpx.get(url + "/health", timeout=1.0).status_code == 200
    except httpx.HTTPError:
        return False


def _wait(pred, timeout: float, what: str) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return
        time.sleep(0.2)
    raise TestbedError(f"timed out waiting for {what}")


def _group_alive(pid: int) -> bool:
    try:
        os.killpg(pid, 0)
        return True
    except ProcessLookupError:
        return False
    except PermissionError:
        return True


def kill_groups(pids: list[int], grace: float = 5.0) -> None:
    """SIGTERM every process group, wait once for all of them, then SIGKILL stragglers."""
    for pid in pids:
        try:
            os.killpg(pid, signal.SIGTERM)
        except ProcessLookupError:
            pass
    deadline = time.monotonic() + grace
    while time.monotonic() < deadline and any(_group_alive(p) for p in pids):
        time.sleep(0.1)
    for pid in pids:
        try:
            os.killpg(pid, signal.SIGKILL)
        except ProcessLookupError:
            pass


class Testbed:
    """Catalog, master, optional echo engine and one agent per device, each in its own session."""

    __test__ = False

    def __init__(self, config: TestbedConfig | dict, workdir: str | Path | None = None):
        self.config = config if isinstance(config, TestbedConfig) else TestbedConfig.from_json(config)
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix=f"echo-testbed-{self.config.name}-"))
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.procs: dict[str, subprocess.Popen] = {}

    @property
    def catalog(self) -> CatalogClient:
        return CatalogClient(self.config.catalog_url)

    def _env(self) -> dict:
        env = dict(os.environ)
        env.update({k: str(v) for k, v in self.config.env.items()})
        env["ECHO_CAT_URL"] = self.config.catalog_url
        if self.config.heartbeat_ms:
            env["ECHO_HEARTBEAT_MS"] = str(self.config.heartbeat_ms)
        return env

    def _spawn(self, name: str, args: list[str], env: dict | None = None) -> subprocess.Popen:
        logdir = self.workdir / "logs"
        logdir.mkdir(exist_ok=True)
        with open(logdir / f"{name}.log", "ab") as logf:
            proc = subprocess.Popen(
                [sys.executable, "-m", *args],
                stdout=logf,
                stderr=subprocess.STDOUT,
                stdin=subprocess.DEVNULL,
                env=env or self._env(),
                cwd=self.workdir,
                start_new_session=True,
            )
        self.procs[name] = proc
        return proc

    def check_ports(self) -> None:
        c = self.config
        wanted = [("catalog", c.catalog_listen), ("master", c.master_listen)]
        wanted += [(f"agent {d['id']}", d["listen"]) for d in c.devices]
        if c.echo_listen:
            wanted.append(("echo engine", c.echo_listen))
        for what, listen in wanted:
            host, port = parse_listen(listen)
            if port_in_use(host, port):
                raise PortConflict(port, what)

    def up(self, timeout: float = 60.0) -> "Testbed":
        self.check_ports()
        c = self.config
        try:
            self._spawn("catalog", ["echoflow.cli", "cat", "--listen", c.catalog_listen])
            _wait(lambda: _healthy(c.catalog_url), timeout, "catalog")
            self.start_master()
            if c.echo_listen:
                self._spawn("echo", ["echoflow.stubs.echo_engine", "--listen", c.echo_listen])
                _wait(lambda: _healthy(c.echo_url), timeout, "echo engine")
            devdir = self.workdir / "devices"
            devdir.mkdir(exist_ok=True)
            for dev in c.devices:
                path = devdir / f"{dev['id']}.json"
                path.write_text(json.dumps(dict(dev, catalog_url=c.catalog_url), indent=2))
                env = self._env()
                env["ECHO_AGENT_WORKDIR"] = str(self.workdir / "agents" / dev["id"])
                self._spawn(f"agent-{dev['id']}", ["echoflow.cli", "agent", "-c", str(path)], env)
                # one agent at a time: on a small host, concurrent engine start-ups can
                # starve each other past the agent's health-check deadline
                _wait(lambda: _healthy(c.agent_url(dev["id"])) or self._check_alive(), timeout, f"agent {dev['id']}")
            expected_workers = sum(len(d.get("workers", [])) for d in c.devices)
            _wait(lambda: self._registered(expected_workers), timeout, "devices and workers to register")
        except Exception:
            self.down()
            raise
        self.save_state()
        return self

    def _check_alive(self) -> bool:
        for name, proc in self.procs.items():
            if proc.poll() is not None:
                raise TestbedError(f"{name} exited with {proc.returncode}; see {self.workdir / 'logs' / (name + '.log')}")
        return False

    def _registered(self, n_workers: int) -> bool:
        self._check_alive()
        try:
            cat = self.catalog
            devices = [i for i in cat.query("/device/") if i.href.count("/") == 2]
            workers = [i for i in cat.query("/worker/") if i.href.count("/") == 2 and i.get("state") == "up"]
        except Exception:
            return False
        return len(devices) >= len(self.config.devices) and len(workers) >= n_workers

    def start_master(self, timeout: float = 30.0) -> None:
        self._spawn("master", ["echoflow.cli", "master", "--listen", self.config.master_listen])
        _wait(lambda: _healthy(self.config.master_url), timeout, "master")

    def kill_master(self) -> None:
        proc = self.procs.pop("master")
        os.killpg(proc.pid, signal.SIGKILL)
        proc.wait(timeout=10)

    def spawn_worker(self, device_id: str, cpu_millis: int, mem_mb: int, profile: str | None = None) -> dict:
        body = {"caps": {"cpu_millis": cpu_millis, "mem_mb": mem_mb}, "profile": profile}
        resp = httpx.post(self.config.agent_url(device_id) + "/workers", json=body, timeout=30.0)
        if resp.status_code != 201:
            raise TestbedError(f"spawn on {device_id} failed: {resp.status_code} {resp.text}")
        return resp.json()

    def save_state(self) -> None:
        state = {
            "name": self.config.name,
            "catalog": self.config.catalog_url,
            "master": self.config.master_url,
            "pids": {name: p.pid for name, p in self.procs.items()},
        }
        (self.workdir / STATE_FILE).write_text(json.dumps(state, indent=2))

    def down(self) -> None:
        kill_groups([p.pid for p in self.procs.values()])
        for proc in self.procs.values():
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                pass
        self.procs.clear()
        state = self.workdir / STATE_FILE
        if state.exists():
            state.unlink()

    def __enter__(self) -> "Testbed":
        return self.up()

    def __exit__(self, *exc) -> None:
        self.down()


def down_from_state(workdir: str | Path) -> list[str]:
    """Tear down a testbed started by another process; returns the names stopped."""
    path = Path(workdir) / STATE_FILE
    if not path.exists():
        raise TestbedError(f"no running testbed recorded in {workdir}")
    state = json.loads(path.read_text())
    pids = state["pids"]
    kill_groups(list(pids.values()))
    path.unlink()
    return sorted(pids)
