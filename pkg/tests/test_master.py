from __future__ import annotations

import json
import threading
import time

import httpx
import pytest

from echoflow.catalog import make_item
from echoflow.master import ApiError, AppManager, CatalogLock, DataflowRecord
from echoflow.master.api import create_app as master_app
from echoflow.master.deployer import EngineClient
from echoflow.serving import ServerThread
from echoflow.wrappers.senml import write_taxi_file

from helpers import flow, input_tuples, linear_flow, proc, sink_tuples, wait_closed


def small(cpu=500, constraints=()) -> dict:
    return flow("small", [proc("a", cpu=cpu, constraints=constraints), proc("b", cpu=cpu)], [("a", "b")])


@pytest.fixture
def manager(catalog):
    return AppManager(catalog)


def fragments_for(cluster, uuid):
    return {wid for wid, eng in cluster.engines.items() if uuid in eng.fragments}


def test_start_describe_stop(cluster, manager):
    for i in range(1, 5):
        cluster.add(f"pi{i}", cpu=4000)
    etl = flow("etl", [proc(p, cpu=2000) for p in ("src", "parse", "cep", "annotate", "sink")],
               [("src", "parse"), ("parse", "cep"), ("cep", "annotate"), ("annotate", "sink")])
    uuid = manager.start(json.dumps(etl).encode())
    rec = manager.record(uuid)
    assert rec.state == "running" and set(rec.mapping) == {"src", "parse", "cep", "annotate", "sink"}
    load = {}
    for pid, wid in rec.mapping.items():
        load[wid] = load.get(wid, 0) + 2000
    assert all(v <= 4000 for v in load.values())
    assert set(rec.timestamps) >= {"scheduling", "deploying", "running"}
    assert "metrics" in manager.describe(uuid)
    assert fragments_for(cluster, uuid) == set(rec.mapping.values())

    assert manager.stop(uuid).state == "stopped"
    assert fragments_for(cluster, uuid) == set()
    assert manager.record(uuid).mapping == rec.mapping
    with pytest.raises(ApiError) as err:
        manager.stop(uuid)
    assert err.value.status == 409


def test_unknown_uuid_is_404(manager):
    for call in (manager.stop, manager.rebalance, manager.describe):
        with pytest.raises(ApiError) as err:
            call("nope")
        assert err.value.status == 404


def test_invalid_spec_is_400_with_violations(cluster, manager):
    cluster.add("w1")
    with pytest.raises(ApiError) as err:
        manager.start(json.dumps(flow("x", [proc("a")], [("a", "ghost")])))
    assert err.value.status == 400 and "unknown processor ghost" in err.value.detail["violations"]


def test_infeasible_is_409_naming_constraint(cluster, manager):
    cluster.add("w1")
    with pytest.raises(ApiError) as err:
        manager.start(small(constraints=["gpu"]))
    assert err.value.status == 409 and "gpu" in err.value.detail


def test_deploy_failure_rolls_back(cluster, catalog, manager):
    cluster.add("w1", cpu=600)
    catalog.register(make_item("/worker/dead", {"device": "dead", "class": "edge", "tags": ["edge"], "cpuMillis": "4000",
                                                "memMb": "1024", "endpoint": "http://127.0.0.1:9", "state": "up"}))
    with pytest.raises(ApiError) as err:
        manager.start(small())
    assert err.value.status == 502 and "dead" in err.value.detail
    (item,) = [i for i in catalog.query("/dataflow/") if i.href.count("/") == 2]
    assert item.get("state") == "failed"
    assert all(not eng.fragments for eng in cluster.engines.values())


def test_stop_with_dead_worker_warns(cluster, manager):
    cluster.add("w1", cpu=600)
    cluster.add("w2", cpu=600)
    uuid = manager.start(small())
    cluster.kill("w2")
    rec = manager.stop(uuid)
    assert rec.state == "stopped" and any("w2" in w for w in rec.warnings)


def test_noop_rebalance(cluster, manager):
    cluster.add("w1")
    uuid = manager.start(small())
    assert manager.rebalance(uuid) == {"uuid": uuid, "mapping": {"a": "w1", "b": "w1"}, "moved": [], "noop": True}
    assert "rebalancing" not in manager.record(uuid).timestamps


def test_lock_conflict_is_409(cluster, catalog, manager):
    cluster.add("w1")
    uuid = manager.start(small())
    with CatalogLock(catalog, uuid):
        with pytest.raises(ApiError) as err:
            manager.rebalance(uuid)
        assert err.value.status == 409
    assert manager.rebalance(uuid)["noop"]


def test_concurrent_requests_serialize(cluster, catalog, manager):
    cluster.add("w1")
    uuid = manager.start(small())
    results = []
    barrier = threading.Barrier(2)

    def stop():
        barrier.wait()
        try:
            results.append(manager.stop(uuid).state)
        except ApiError as exc:
            results.append(exc.status)

    threads = [threading.Thread(target=stop) for _ in range(2)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(map(str, results)) == ["409", "stopped"]


def test_record_round_trips_through_catalog():
    rec = DataflowRecord("u1", "n", "running", {"a": 1}, {"p": "w"}, {}, {"running": "t"}, ["w1", "w2"])
    assert DataflowRecord.from_item(rec.to_item()) == rec


def rebalance_setup(cluster, catalog, manager, tmp_path, records=2000, rate=400):
    cluster.add("e1", cpu=8000)
    infile = write_taxi_file(tmp_path / "in.senml", records)
    payload = linear_flow(infile, tmp_path, records, src_rate=rate)
    payload["qos"] = {"prefer_class": "cloud"}
    for p in payload["processors"]:
        p["demands"]["cpu_millis"] = 1000
    payload["processors"][0]["constraints"] = ["edge"]
    uuid = manager.start(payload)
    time.sleep(1.0)
    cluster.add("c1", "cloud", cpu=8000)
    return uuid, infile


def sink_engine(cluster, manager, uuid):
    return cluster.engines[manager.record(uuid).mapping["sink"]]


def test_rebalance_moves_and_conserves(cluster, catalog, manager, tmp_path):
    uuid, infile = rebalance_setup(cluster, catalog, manager, tmp_path)
    result = manager.rebalance(uuid)
    assert not result["noop"] and set(result["moved"]) == {"parse", "cep", "annotate", "sink"}
    assert manager.record(uuid).state == "running"
    assert fragments_for(cluster, uuid) == {"e1", "c1"}
    wait_closed(sink_engine(cluster, manager, uuid), uuid, "sink", timeout=60)
    assert sink_tuples(tmp_path / "sink.out") == input_tuples(infile)


def test_rebalance_rolls_back_when_target_dies(cluster, catalog, manager, tmp_path, monkeypatch):
    uuid, infile = rebalance_setup(cluster, catalog, manager, tmp_path)
    real_put = EngineClient.put

    def put(self, desc):
        if self.worker == "c1" and "c1" in cluster.servers:
            cluster.kill("c1")  # dies after pause and snapshot, as the new fragment arrives
        return real_put(self, desc)

    monkeypatch.setattr(EngineClient, "put", put)
    with pytest.raises(ApiError) as err:
        manager.rebalance(uuid)
    assert err.value.status == 502
    rec = manager.record(uuid)
    assert rec.state == "running" and set(rec.mapping.values()) == {"e1"} and rec.warnings
    wait_closed(cluster.engines["e1"], uuid, "sink", timeout=60)
    assert sink_tuples(tmp_path / "sink.out") == input_tuples(infile)


def test_http_api(cluster, catalog, manager):
    cluster.add("w1")
    srv = ServerThread(master_app(manager)).start()
    try:
        r = httpx.post(srv.url + "/dataflows", content=json.dumps(small()))
        assert r.status_code == 201 and r.json()["state"] == "running"
        uuid = r.json()["uuid"]
        assert httpx.post(srv.url + "/dataflows", content=b"{nope").status_code == 400
        assert httpx.get(srv.url + f"/dataflows/{uuid}").json()["mapping"] == {"a": "w1", "b": "w1"}
        assert [d["uuid"] for d in httpx.get(srv.url + "/dataflows").json()] == [uuid]
        assert httpx.post(srv.url + f"/dataflows/{uuid}/rebalance").json()["noop"] is True
        assert httpx.get(srv.url + "/dataflows/missing").status_code == 404
        assert httpx.delete(srv.url + f"/dataflows/{uuid}").json()["state"] == "stopped"
        assert httpx.delete(srv.url + f"/dataflows/{uuid}").status_code == 409
    finally:
        srv.stop()
