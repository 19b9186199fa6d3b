"""Agent process: bootstrap registration, initial workers, then serve the REST API."""

from __future__ import annotations

import dataclasses
import logging
import os
import threading

import uvicorn

from ..catalog import CatalogClient
from ..common import parse_listen
from .api import create_app
from .config import Caps, DeviceConfig
from .service import DeviceService, default_workdir

log = logging.getLogger(__name__)


def run_agent(config_path: str, listen: str | None = None, catalog_url: str | None = None) -> None:
    config = DeviceConfig.load(config_path)
    overrides = {}
    if listen or os.environ.get("ECHO_AGENT_LISTEN"):
        overrides["listen"] = listen or os.environ["ECHO_AGENT_LISTEN"]
    if catalog_url or os.environ.get("ECHO_CAT_URL"):
        overrides["catalog_url"] = catalog_url or os.environ["ECHO_CAT_URL"]
    config = dataclasses.replace(config, **overrides)
    service = DeviceService(config, CatalogClient(config.catalog_url), workdir=default_workdir())
    service.bootstrap()
    log.info("device %s registered", config.id)
    for spec in config.workers:
        w = service.spawn_worker(Caps.from_json(spec.get("caps", {})), spec.get("profile"))
        log.info("worker %s up at %s", w.worker_id, w.endpoint)

    host, port = parse_listen(config.listen, 8710)
    server: uvicorn.Server | None = None

    def stop_later() -> None:
        threading.Timer(0.2, lambda: setattr(server, "should_exit", True)).start()

    server = uvicorn.Server(
        uvicorn.Config(create_app(service, stop_later), host=host, port=port, log_level="warning",
                       access_log=False, lifespan="off")
    )
    try:
        server.run()
    finally:
        service.shutdown()
