"""Small shared helpers: timestamps, listen addresses, environment config."""

from __future__ import annotations

import os
import socket
from datetime import datetime, timezone

REL = "urn:echo:rel:"
LAST_UPDATED = REL + "lastUpdated"
STALE = REL + "stale"
EXPIRES = REL + "expires"

DEFAULT_HEARTBEAT_MS = 5000


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def now_iso() -> str:
    return iso(utcnow())


def parse_iso(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def parse_listen(value: str, default_port: int = 0) -> tuple[str, int]:
    """Split "host:port" (or a bare port) into its parts."""
    value = value.strip()
    if value.startswith("http://"):
        value = value[len("http://"):]
    value = value.rstrip("/")
    if ":" not in value:
        if value.isdigit():
            return "127.0.0.1", int(value)
        return value, default_port
    host, port = value.rsplit(":", 1)
    return host or "127.0.0.1", int(port)


def url_for(host: str, port: int) -> str:
    return f"http://{host}:{port}"


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def port_in_use(host: str, port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((host, port))
        except OSError:
            return True
    return False


def env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if not raw:
        return default
    return int(raw)


def heartbeat_ms() -> int:
    return env_int("ECHO_HEARTBEAT_MS", DEFAULT_HEARTBEAT_MS)
