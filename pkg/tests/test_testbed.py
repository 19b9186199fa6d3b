from __future__ import annotations

import json
import socket

import psutil
import pytest
from click.testing import CliRunner

from echoflow.cli import main
from echoflow.common import parse_listen
from echoflow.testbed import (PortConflict, Testbed, TestbedConfig, TestbedError, down_from_state,
                              load_config, with_free_ports)


def tiny() -> dict:
    cfg = load_config("default")
    cfg["name"] = "tiny"
    cfg.pop("echo")
    cfg["devices"] = [cfg["devices"][0], cfg["devices"][4]]
    return with_free_ports(cfg)


def descendants() -> set[int]:
    return {p.pid for p in psutil.Process().children(recursive=True) if p.status() != psutil.STATUS_ZOMBIE}


def test_default_config_shape():
    cfg = TestbedConfig.from_json(load_config("default"))
    assert len(cfg.devices) == 6
    assert sorted(d["class"] for d in cfg.devices) == ["cloud"] * 2 + ["edge"] * 4
    assert all(d["profile"] == "edge-throttled" for d in cfg.devices if d["class"] == "edge")


def test_with_free_ports_keeps_topology():
    base = load_config("default")
    moved = with_free_ports(base)
    assert [d["id"] for d in moved["devices"]] == [d["id"] for d in base["devices"]]
    assert moved["catalog"]["listen"] != base["catalog"]["listen"] or moved["master"] != base["master"]
    TestbedConfig.from_json(moved)


def test_config_validation():
    cfg = load_config("default")
    with pytest.raises(TestbedError, match="at least one device"):
        TestbedConfig.from_json(dict(cfg, devices=[]))
    clash = with_free_ports(cfg)
    clash["master"]["listen"] = clash["catalog"]["listen"]
    with pytest.raises(TestbedError, match="unique"):
        TestbedConfig.from_json(clash)
    with pytest.raises(TestbedError, match="cannot read"):
        load_config("no-such-config")


def test_port_conflict_names_the_port(tmp_path):
    cfg = tiny()
    host, port = parse_listen(cfg["master"]["listen"])
    with socket.socket() as s:
        s.bind((host, port))
        s.listen()
        with pytest.raises(PortConflict) as err:
            Testbed(cfg, tmp_path).up()
    assert err.value.port == port and str(port) in str(err.value)
    assert descendants() == set()


@pytest.mark.slow
def test_up_registers_and_down_leaves_nothing(tmp_path):
    before = descendants()
    tb = Testbed(tiny(), tmp_path).up()
    try:
        cat = tb.catalog
        devices = sorted(i.href for i in cat.query("/device/") if i.href.count("/") == 2)
        assert devices == ["/device/cloud1", "/device/edge1"]
        workers = [i for i in cat.query("/worker/") if i.href.count("/") == 2]
        assert len(workers) == 1 and workers[0].get("device") == "edge1"
        assert descendants() - before
    finally:
        tb.down()
    assert descendants() - before == set()
    assert not (tmp_path / "testbed.json").exists()


@pytest.mark.slow
def test_cli_up_and_down(tmp_path):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(tiny()))
    before = descendants()
    runner = CliRunner()
    res = runner.invoke(main, ["testbed", "up", "-c", str(cfg_path), "-w", str(tmp_path / "tb")])
    try:
        assert res.exit_code == 0, res.output
        assert "agent   edge1" in res.output
    finally:
        res = runner.invoke(main, ["testbed", "down", "-c", str(cfg_path), "-w", str(tmp_path / "tb")])
    assert res.exit_code == 0, res.output
    for name in ("catalog", "master", "agent-edge1", "agent-cloud1"):
        assert name in res.output
    assert descendants() - before == set()
    with pytest.raises(TestbedError):
        down_from_state(tmp_path / "tb")
