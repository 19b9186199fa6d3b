from __future__ import annotations

import logging
import os

from ..common import heartbeat_ms, parse_listen
from ..serving import serve
from .api import create_app
from .store import CatalogStore, Housekeeper

log = logging.getLogger(__name__)


def run_catalog(listen: str | None = None, snapshot: str | None = None, watch_timeout: float = 30.0) -> None:
    listen = listen or os.environ.get("ECHO_CAT_LISTEN", "127.0.0.1:8700")
    host, port = parse_listen(listen, 8700)
    store = CatalogStore(heartbeat_ms=heartbeat_ms(), watch_timeout=watch_timeout)
    if snapshot and store.load_snapshot(snapshot):
        log.info("restored %d items from %s", len(store.all()), snapshot)
    keeper = Housekeeper(store, snapshot=snapshot)
    keeper.start()
    log.info("catalog listening on %s:%d", host, port)
    try:
        serve(create_app(store), host, port)
    finally:
        keeper.stop()
