"""Worker engine process entry point (spawned by an agent)."""

from __future__ import annotations

import argparse
import logging
import os
import threading

import uvicorn

from ..common import env_int, parse_listen
from ..serving import setup_logging
from .api import create_app
from .fragment import Engine
from .metrics import MetricsReporter

log = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="echoflow.engine.server")
    ap.add_argument("--listen", default=os.environ.get("ECHO_ENGINE_LISTEN", "127.0.0.1:0"))
    ap.add_argument("--worker-id", default=os.environ.get("ECHO_WORKER_ID", "local"))
    ap.add_argument("--device", default=os.environ.get("ECHO_DEVICE_ID", ""))
    ap.add_argument("--cpu-millis", type=int, default=env_int("ECHO_CPU_MILLIS", 1000))
    ap.add_argument("--mem-mb", type=int, default=env_int("ECHO_MEM_MB", 512))
    ap.add_argument("--profile", default=os.environ.get("ECHO_PROFILE", "unthrottled"))
    ap.add_argument("--catalog", default=os.environ.get("ECHO_CAT_URL", ""))
    ap.add_argument("--reachable-from", default=os.environ.get("ECHO_REACHABLE_FROM", "*"),
                    help="comma-separated device ids allowed to open links to this worker")
    ap.add_argument("--workdir", default=os.environ.get("ECHO_WORKDIR"))
    ap.add_argument("--metrics-interval-ms", type=int, default=env_int("ECHO_METRICS_INTERVAL_MS", 5000))
    ap.add_argument("--log-level", default=os.environ.get("ECHO_LOG_LEVEL", "WARNING"))
    return ap


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    host, port = parse_listen(args.listen, 0)
    engine = Engine(args.worker_id, args.device, args.cpu_millis, args.mem_mb, args.profile, args.workdir)
    server: uvicorn.Server | None = None

    def stop_later() -> None:
        threading.Timer(0.2, lambda: setattr(server, "should_exit", True)).start()

    reachable = [x.strip() for x in args.reachable_from.split(",") if x.strip()]
    app = create_app(engine, reachable, on_shutdown=stop_later)
    server = uvicorn.Server(
        uvicorn.Config(app, host=host, port=port, log_level="warning", access_log=False, lifespan="off")
    )
    reporter = None
    if args.catalog:
        reporter = MetricsReporter(engine, args.catalog, args.metrics_interval_ms / 1000.0)
        reporter.start()
    try:
        server.run()
    finally:
        if reporter:
            reporter.stop()
        engine.shutdown()


if __name__ == "__main__":
    main()
