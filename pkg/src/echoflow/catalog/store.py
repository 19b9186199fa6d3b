"""In-memory Resource Directory with a long-poll change feed and JSON snapshots."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from datetime import datetime, timedelta
from pathlib import Path

from ..common import EXPIRES, LAST_UPDATED, STALE, iso, parse_iso, utcnow
from .model import CatalogItem, Relation, href_depth, href_kind, validate_href

log = logging.getLogger(__name__)

CATALOGUE_METADATA = [
    {"rel": "urn:X-hypercat:rels:isContentType", "val": "application/vnd.hypercat.catalogue+json"},
    {"rel": "urn:X-hypercat:rels:hasDescription:en", "val": "echoflow resource directory"},
]


class ItemExists(Exception):
    def __init__(self, item: CatalogItem):
        super().__init__(item.href)
        self.item = item


class CatalogStore:
    """Thread-safe href -> item map.

    Items are immutable, so a reader always sees either the old or the new
    complete item. Every write stamps a strictly increasing lastUpdated.
    """

    def __init__(self, heartbeat_ms: int = 5000, watch_timeout: float = 30.0):
        self._items: dict[str, CatalogItem] = {}
        self._cond = threading.Condition()
        self._last_stamp: datetime | None = None
        self.heartbeat_ms = heartbeat_ms
        self.watch_timeout = watch_timeout

    def _stamp(self) -> datetime:
        now = utcnow()
        if self._last_stamp is not None and now <= self._last_stamp:
            now = self._last_stamp + timedelta(microseconds=1)
        self._last_stamp = now
        return now

    def register(self, item: CatalogItem, if_absent: bool = False) -> tuple[CatalogItem, bool]:
        """Store ``item`` (last writer wins). Returns (stored item, created)."""
        validate_href(item.href)
        with self._cond:
            existing = self._items.get(item.href)
            if if_absent and existing is not None and not _expired(existing):
                raise ItemExists(existing)
            stored = item.without(LAST_UPDATED).with_relation(LAST_UPDATED, iso(self._stamp()))
            self._items[item.href] = stored
            self._cond.notify_all()
        return stored, existing is None

    def get(self, href: str) -> CatalogItem | None:
        with self._cond:
            return self._items.get(href)

    def query_prefix(self, prefix: str = "") -> list[CatalogItem]:
        with self._cond:
            items = [it for h, it in self._items.items() if h.startswith(prefix)]
        return sorted(items, key=lambda it: it.href)

    def all(self) -> list[CatalogItem]:
        return self.query_prefix("")

    def delete(self, href: str) -> bool:
        with self._cond:
            found = self._items.pop(href, None) is not None
            if found:
                self._cond.notify_all()
        return found

    def changed_since(self, prefix: str, since: datetime) -> list[CatalogItem]:
        return [it for it in self.query_prefix(prefix) if it.last_updated and it.last_updated > since]

    def watch(self, prefix: str, since: datetime, timeout: float | None = None) -> list[CatalogItem]:
        """Items under ``prefix`` updated after ``since``; blocks up to ``timeout`` seconds."""
        timeout = self.watch_timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                found = self.changed_since(prefix, since)
                remaining = deadline - time.monotonic()
                if found or remaining <= 0:
                    return found
                self._cond.wait(remaining)

    def sweep(self, now: datetime | None = None) -> list[str]:
        """Flag device/worker items whose heartbeat is older than 3x the interval.

        The flag does not refresh lastUpdated; it disappears when the owner
        re-registers the item.
        """
        now = now or utcnow()
        limit = timedelta(milliseconds=3 * self.heartbeat_ms)
        flagged = []
        with self._cond:
            for href, item in list(self._items.items()):
                if href_depth(href) != 2 or href_kind(href) not in ("device", "worker"):
                    continue
                if item.stale or item.last_updated is None:
                    continue
                if now - item.last_updated > limit:
                    self._items[href] = CatalogItem(href, item.metadata + (Relation(STALE, "true"),))
                    flagged.append(href)
        if flagged:
            log.info("flagged stale: %s", ", ".join(flagged))
        return flagged

    def to_json(self) -> dict:
        return {
            "catalogue-metadata": list(CATALOGUE_METADATA),
            "items": [it.to_json() for it in self.all()],
        }

    def load_json(self, data: dict) -> None:
        with self._cond:
            self._items = {}
            for raw in data.get("items", []):
                item = CatalogItem.from_json(raw)
                validate_href(item.href)
                self._items[item.href] = item
            self._cond.notify_all()

    def save_snapshot(self, path: str | os.PathLike) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_json()))
        os.replace(tmp, path)

    def load_snapshot(self, path: str | os.PathLike) -> bool:
        path = Path(path)
        if not path.exists():
            return False
        self.load_json(json.loads(path.read_text()))
        return True


def _expired(item: CatalogItem) -> bool:
    val = item.get(EXPIRES)
    if not val:
        return False
    try:
        return parse_iso(val) < utcnow()
    except ValueError:
        return False


class Housekeeper(threading.Thread):
    """Runs the stale sweeper and periodic snapshots."""

    def __init__(self, store: CatalogStore, snapshot: str | None = None, snapshot_interval: float = 5.0):
        super().__init__(name="catalog-housekeeper", daemon=True)
        self.store = store
        self.snapshot = snapshot
        self.snapshot_interval = snapshot_interval
        self._halt = threading.Event()

    def run(self) -> None:
        sweep_every = max(self.store.heartbeat_ms / 1000.0 / 2, 0.05)
        last_snap = time.monotonic()
        while not self._halt.wait(sweep_every):
            try:
                self.store.sweep()
                if self.snapshot and time.monotonic() - last_snap >= self.snapshot_interval:
                    self.store.save_snapshot(self.snapshot)
                    last_snap = time.monotonic()
            except Exception:
                log.exception("catalog housekeeping failed")

    def stop(self) -> None:
        self._halt.set()
        if self.snapshot:
            self.store.save_snapshot(self.snapshot)
