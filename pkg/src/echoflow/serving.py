"""Run FastAPI apps under uvicorn, blocking or on a background thread."""

from __future__ import annotations

import logging
import threading
import time

import uvicorn


def _config(app, host: str, port: int) -> uvicorn.Config:
    return uvicorn.Config(
        app,
        host=host,
        port=port,
        log_level="warning",
        access_log=False,
        timeout_keep_alive=30,
        lifespan="off",
    )


def serve(app, host: str, port: int) -> None:
    uvicorn.Server(_config(app, host, port)).run()


class ServerThread(threading.Thread):
    """uvicorn server in a daemon thread; used by tests and the echo stub."""

    def __init__(self, app, host: str = "127.0.0.1", port: int = 0):
        super().__init__(daemon=True, name=f"uvicorn-{port}")
        if port == 0:
            from .common import free_port

            port = free_port(host)
        self.host, self.port = host, port
        self.server = uvicorn.Server(_config(app, host, port))
        self.server.install_signal_handlers = lambda: None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def run(self) -> None:
        self.server.run()

    def start(self, timeout: float = 10.0) -> "ServerThread":
        super().start()
        deadline = time.monotonic() + timeout
        while not self.server.started:
            if time.monotonic() > deadline or not self.is_alive():
                raise RuntimeError(f"server on port {self.port} did not start")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        self.server.should_exit = True
        self.join(timeout=5)


def setup_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
