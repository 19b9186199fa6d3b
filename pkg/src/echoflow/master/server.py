"""Master process: stateless REST front for the App Manager."""

from __future__ import annotations

import logging
import os

from ..catalog import CatalogClient, make_item
from ..common import parse_listen, url_for
from ..serving import serve
from .api import create_app
from .manager import AppManager

log = logging.getLogger(__name__)


def run_master(listen: str | None = None, catalog_url: str | None = None, scheduler: str = "first_fit") -> None:
    listen = listen or os.environ.get("ECHO_MASTER_LISTEN", "127.0.0.1:8800")
    catalog_url = catalog_url or os.environ.get("ECHO_CAT_URL", "http://127.0.0.1:8700")
    host, port = parse_listen(listen, 8800)
    catalog = CatalogClient(catalog_url)
    if catalog.wait_healthy(timeout=10.0):
        catalog.register(make_item("/service/master", {"endpoint": url_for(host, port), "scheduler": scheduler}))
    else:
        log.warning("catalog at %s not reachable yet; continuing", catalog_url)
    serve(create_app(AppManager(catalog, scheduler)), host, port)
