from __future__ import annotations

import json
import threading
import time
from datetime import timedelta

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from echoflow.catalog import CatalogItem, CatalogStore, Conflict, InvalidHref, Relation, make_item
from echoflow.catalog.store import ItemExists
from echoflow.common import EXPIRES, LAST_UPDATED, REL, STALE, iso, parse_iso, utcnow


def cores_item(val: str = "4") -> CatalogItem:
    return CatalogItem("/device/e97e0195acf4", (Relation(REL + "cores", val),))


# store semantics --------------------------------------------------------------------


def test_register_then_get_returns_item_with_last_updated():
    store = CatalogStore()
    store.register(cores_item())
    got = store.get("/device/e97e0195acf4")
    assert got.get("cores") == "4"
    parse_iso(got.get(LAST_UPDATED))


def test_reregister_replaces_whole_item():
    store = CatalogStore()
    store.register(cores_item("4"))
    store.register(CatalogItem("/device/e97e0195acf4", (Relation(REL + "memMb", "1024"),)))
    got = store.get("/device/e97e0195acf4")
    assert got.get("cores") is None
    assert got.get("memMb") == "1024"


@pytest.mark.parametrize("href", ["bad href", "", "device/x", "/device", "/device//x", "/nosuchkind/x"])
def test_invalid_hrefs_rejected(href):
    with pytest.raises(InvalidHref):
        CatalogStore().register(CatalogItem(href, ()))


def test_get_unknown_is_none():
    assert CatalogStore().get("/device/unknown") is None


def test_prefix_query_examples():
    store = CatalogStore()
    for h in ("/device/b", "/dataflow/x", "/device/a"):
        store.register(CatalogItem(h, ()))
    assert [i.href for i in store.query_prefix("/device/")] == ["/device/a", "/device/b"]
    assert len(store.query_prefix("")) == 3
    assert store.query_prefix("/worker/") == []


def test_delete_is_exact_key():
    store = CatalogStore()
    store.register(CatalogItem("/device/x", ()))
    store.register(CatalogItem("/device/x/CPUUtil", ()))
    assert store.delete("/device/x")
    assert not store.delete("/device/x")
    assert store.get("/device/x") is None
    assert store.get("/device/x/CPUUtil") is not None


def test_last_updated_strictly_increases():
    store = CatalogStore()
    stamps = []
    for i in range(200):
        stamps.append(parse_iso(store.register(CatalogItem(f"/device/d{i % 3}", ()))[0].get(LAST_UPDATED)))
    assert all(a < b for a, b in zip(stamps, stamps[1:]))


def test_if_absent_conflicts_unless_expired():
    store = CatalogStore()
    live = CatalogItem("/dataflow/u/lock", (Relation(EXPIRES, iso(utcnow() + timedelta(seconds=60))),))
    store.register(live, if_absent=True)
    with pytest.raises(ItemExists):
        store.register(live, if_absent=True)
    dead = CatalogItem("/dataflow/v/lock", (Relation(EXPIRES, iso(utcnow() - timedelta(seconds=1))),))
    store.register(dead)
    store.register(dead, if_absent=True)


def test_sweep_flags_only_old_device_and_worker_items():
    store = CatalogStore(heartbeat_ms=100)
    for h in ("/device/d1", "/worker/w1", "/dataflow/f1", "/device/d1/CPUUtil"):
        store.register(CatalogItem(h, ()))
    assert store.sweep() == []
    flagged = store.sweep(now=utcnow() + timedelta(seconds=1))
    assert sorted(flagged) == ["/device/d1", "/worker/w1"]
    assert store.get("/worker/w1").stale
    store.register(CatalogItem("/worker/w1", ()))
    assert not store.get("/worker/w1").stale


def test_watch_returns_latest_version_once():
    store = CatalogStore(watch_timeout=0.2)
    t0 = utcnow()
    store.register(CatalogItem("/device/a", (Relation(REL + "v", "1"),)))
    store.register(CatalogItem("/device/a", (Relation(REL + "v", "2"),)))
    found = store.watch("/device/", t0)
    assert [(i.href, i.get("v")) for i in found] == [("/device/a", "2")]


def test_watch_times_out_empty():
    store = CatalogStore(watch_timeout=0.2)
    t = time.monotonic()
    assert store.watch("/device/", utcnow()) == []
    assert time.monotonic() - t >= 0.19


def test_watch_wakes_on_write():
    store = CatalogStore(watch_timeout=5.0)
    since = utcnow()
    threading.Timer(0.1, lambda: store.register(CatalogItem("/worker/w", ()))).start()
    t = time.monotonic()
    assert [i.href for i in store.watch("/worker/", since)] == ["/worker/w"]
    assert time.monotonic() - t < 2.0


def test_snapshot_round_trip(tmp_path):
    store = CatalogStore()
    store.register(make_item("/device/a", {"cores": 4, "tags": ["edge"]}))
    store.register(make_item("/dataflow/x", {"state": "running"}))
    path = tmp_path / "snap.json"
    store.save_snapshot(path)
    other = CatalogStore()
    assert other.load_snapshot(path)
    assert [i.to_json() for i in other.all()] == [i.to_json() for i in store.all()]


# properties ------------------------------------------------------------------------

segment = st.text(alphabet="abcdefgh0123456789-", min_size=1, max_size=4)
hrefs = st.builds(
    lambda kind, parts: "/" + "/".join([kind, *parts]),
    st.sampled_from(["device", "worker", "dataflow"]),
    st.lists(segment, min_size=1, max_size=3),
)


@given(st.lists(hrefs, max_size=1000), st.one_of(st.just(""), hrefs, hrefs.map(lambda h: h[: len(h) // 2])))
def test_prefix_query_matches_filter_oracle(all_hrefs, prefix):
    store = CatalogStore()
    for h in all_hrefs:
        store.register(CatalogItem(h, ()))
    expected = sorted(h for h in set(all_hrefs) if h.startswith(prefix))
    got = store.query_prefix(prefix)
    assert [i.href for i in got] == expected
    for item in got:
        parse_iso(item.get(LAST_UPDATED))


@given(st.lists(st.tuples(st.sampled_from(["/device/a", "/device/b", "/worker/c"]), st.text(max_size=5)), max_size=50))
def test_last_writer_wins(writes):
    store = CatalogStore()
    last = {}
    for href, val in writes:
        store.register(CatalogItem(href, (Relation(REL + "v", val),)))
        last[href] = val
    for href, val in last.items():
        assert store.get(href).get("v") == val


relations = st.lists(st.tuples(st.text(min_size=1, max_size=8), st.text(max_size=8)), max_size=6)


@given(hrefs, relations)
def test_item_json_round_trip(href, rels):
    item = CatalogItem(href, tuple(Relation(r, v) for r, v in rels))
    assert CatalogItem.from_json(json.loads(json.dumps(item.to_json()))) == item


# HTTP surface ----------------------------------------------------------------------


def test_http_register_status_codes(catalog_server):
    _, url = catalog_server
    body = cores_item().to_json()
    assert httpx.post(url + "/cat", json=body).status_code == 201
    assert httpx.post(url + "/cat", json=body).status_code == 200
    assert httpx.post(url + "/cat", json={"href": "bad href", "item-metadata": []}).status_code == 422
    assert httpx.post(url + "/cat", content=b"{not json").status_code == 400
    assert httpx.post(url + "/cat", json={"item-metadata": []}).status_code == 400
    full = httpx.get(url + "/cat").json()
    assert "catalogue-metadata" in full and len(full["items"]) == 1
    assert httpx.delete(url + "/cat/items", params={"href": "/device/e97e0195acf4"}).status_code == 204
    assert httpx.delete(url + "/cat/items", params={"href": "/device/e97e0195acf4"}).status_code == 404
    assert httpx.get(url + "/cat/items", params={"href": "/device/e97e0195acf4"}).status_code == 404


def test_client_round_trip(catalog):
    catalog.register(make_item("/device/d1", {"cores": 4}))
    catalog.register(make_item("/device/d1/CPUUtil", {"value": "12.5"}))
    assert catalog.get("/device/d1").get("cores") == "4"
    assert catalog.get("/device/d1/CPUUtil").get("value") == "12.5"
    assert [i.href for i in catalog.query("/device/")] == ["/device/d1", "/device/d1/CPUUtil"]
    assert catalog.get("/device/none") is None
    since = utcnow()
    catalog.register(make_item("/device/d2", {}))
    assert [i.href for i in catalog.watch("/device/", since, timeout=1.0)] == ["/device/d2"]
    assert catalog.delete("/device/d1") and not catalog.delete("/device/d1")


def test_client_conflict_carries_holder(catalog):
    lock = make_item("/dataflow/u/lock", {"owner": "a", "expires": iso(utcnow() + timedelta(seconds=30))})
    catalog.register(lock, if_absent=True)
    with pytest.raises(Conflict) as err:
        catalog.register(make_item("/dataflow/u/lock", {"owner": "b"}), if_absent=True)
    assert err.value.item.get("owner") == "a"


def test_stale_relation_constant():
    assert STALE == REL + "stale"
