"""HTTP client for the catalog service."""

from __future__ import annotations

import time
from datetime import datetime

import httpx

from ..common import iso
from .model import CatalogItem


class CatalogUnavailable(RuntimeError):
    pass


class Conflict(RuntimeError):
    def __init__(self, item: CatalogItem | None):
        super().__init__("item exists")
        self.item = item


class CatalogClient:
    def __init__(self, base_url: str, timeout: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, method: str, url: str, **kw) -> httpx.Response:
        try:
            return self._http.request(method, url, **kw)
        except httpx.TransportError as exc:
            raise CatalogUnavailable(f"catalog at {self.base_url} unreachable: {exc}") from exc

    def register(self, item: CatalogItem, if_absent: bool = False) -> CatalogItem:
        params = {"if_absent": "true"} if if_absent else None
        resp = self._call("POST", "/cat", json=item.to_json(), params=params)
        if resp.status_code == 409:
            detail = resp.json().get("detail", {})
            raw = detail.get("item") if isinstance(detail, dict) else None
            raise Conflict(CatalogItem.from_json(raw) if raw else None)
        resp.raise_for_status()
        return CatalogItem.from_json(resp.json())

    def get(self, href: str) -> CatalogItem | None:
        resp = self._call("GET", "/cat/items", params={"href": href})
        if resp.status_code == 404:
            return None
        resp.raise_for_status()
        return CatalogItem.from_json(resp.json())

    def query(self, prefix: str = "") -> list[CatalogItem]:
        resp = self._call("GET", "/cat/items", params={"prefix": prefix})
        resp.raise_for_status()
        return [CatalogItem.from_json(x) for x in resp.json()["items"]]

    def catalogue(self) -> dict:
        resp = self._call("GET", "/cat")
        resp.raise_for_status()
        return resp.json()

    def delete(self, href: str) -> bool:
        resp = self._call("DELETE", "/cat/items", params={"href": href})
        if resp.status_code == 404:
            return False
        resp.raise_for_status()
        return True

    def watch(self, prefix: str, since: datetime, timeout: float | None = None) -> list[CatalogItem]:
        params = {"prefix": prefix, "since": iso(since)}
        if timeout is not None:
            params["timeout"] = str(timeout)
        wait = (timeout if timeout is not None else 30.0) + 5.0
        resp = self._call("GET", "/cat/watch", params=params, timeout=wait)
        resp.raise_for_status()
        return [CatalogItem.from_json(x) for x in resp.json()["items"]]

    def healthy(self) -> bool:
        try:
            return self._http.get("/health", timeout=1.0).status_code == 200
        except httpx.HTTPError:
            return False

    def wait_healthy(self, timeout: float = 10.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.healthy():
                return True
            time.sleep(0.1)
        return False
