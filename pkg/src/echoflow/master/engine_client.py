from __future__ import annotations

from urllib.parse import quote

import httpx


class EngineError(RuntimeError):
    def __init__(self, worker: str, message: str, status: int | None = None):
        super().__init__(f"worker {worker}: {message}")
        self.worker = worker
        self.status = status


class EngineClient:
    """Control-plane calls from the deployer to one worker engine."""

    def __init__(self, worker: str, endpoint: str, timeout: float = 20.0):
        self.worker = worker
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, **kw) -> dict:
        try:
            resp = httpx.request(method, self.endpoint + path, timeout=kw.pop("timeout", self.timeout), **kw)
        except httpx.HTTPError as exc:
            raise EngineError(self.worker, f"unreachable at {self.endpoint}: {type(exc).__name__}") from exc
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise EngineError(self.worker, f"HTTP {resp.status_code}: {detail}", resp.status_code)
        return resp.json() if resp.content else {}

    def health(self) -> bool:
        try:
            self._call("GET", "/health", timeout=2.0)
            return True
        except EngineError:
            return False

    def fragments(self) -> list[str]:
        return self._call("GET", "/fragments")["fragments"]

    def deploy(self, desc: dict) -> dict:
        return self._call("POST", "/fragments", json=desc)

    def put(self, desc: dict) -> dict:
        return self._call("PUT", f"/fragments/{desc['fragment_id']}", json=desc)

    def start(self, fid: str) -> dict:
        return self._call("POST", f"/fragments/{fid}/start")

    def undeploy(self, fid: str) -> dict:
        return self._call("POST", f"/fragments/{fid}/undeploy")

    def status(self, fid: str) -> dict:
        return self._call("GET", f"/fragments/{fid}")

    def pause(self, fid: str, pids) -> dict:
        return self._call("POST", f"/fragments/{fid}/pause", json={"processors": sorted(pids)})

    def resume(self, fid: str, pids) -> dict:
        return self._call("POST", f"/fragments/{fid}/resume", json={"processors": sorted(pids)})

    def queues(self, fid: str, content: bool = False, edges=None) -> dict:
        params = {"content": str(content).lower()}
        if edges:
            params["edges"] = ",".join(sorted(edges))
        return self._call("GET", f"/fragments/{fid}/queues", params=params)

    def inject(self, fid: str, edge: str, envelopes: list[dict]) -> dict:
        return self._call("POST", f"/fragments/{fid}/queues/{quote(edge, safe='')}/inject", json={"batches": envelopes})

    def freeze(self, fid: str, link_id: str) -> dict:
        return self._call("POST", f"/fragments/{fid}/links/{link_id}/freeze")

    def processor_state(self, fid: str, pid: str) -> dict:
        return self._call("GET", f"/fragments/{fid}/processors/{pid}/state")
