"""ProcessorInstance: one thread running a processor's logic inside a fragment."""

from __future__ import annotations

import logging
import threading
from collections import deque
from typing import Any

from ..databatch import (
    DataBatch,
    WindowAccumulator,
    WindowPolicy,
    batch_to_file,
    batch_to_stream,
    file_to_batch,
    remove_file,
)
from ..flowmodel import DataModelKind, ProcessorSpec
from ..wrappers.base import ProcessorLogic
from .queues import EdgeQueue
from .throttle import Throttle

log = logging.getLogger(__name__)

DEPLOYED, RUNNING, PAUSED, STOPPED = "deployed", "running", "paused", "stopped"


class IllegalTransition(RuntimeError):
    def __init__(self, pid: str, state: str, action: str):
        super().__init__(f"processor {pid}: cannot {action} while {state}")
        self.state = state


class ProcessorInstance:
    def __init__(self, spec: ProcessorSpec, logic: ProcessorLogic, throttle: Throttle):
        self.spec = spec
        self.id = spec.id
        self.logic = logic
        self.throttle = throttle
        self.work_us = float(spec.config.get("work_us_per_tuple", 0) or 0)
        self.error_edge = spec.config.get("error_edge")
        self.inputs: dict[str, EdgeQueue] = {}
        self.outputs: dict[str, EdgeQueue] = {}
        self.state = DEPLOYED
        self.counters = {"in": 0, "out": 0, "tuples_in": 0, "tuples_out": 0, "errors": 0}
        self.pending: deque[tuple[str, DataBatch]] = deque()
        self.eos_seen: set[str] = set()
        self.closed = False
        self._acc = None
        if spec.output_model == DataModelKind.STREAM:
            self._acc = WindowAccumulator(WindowPolicy.from_config(spec.config.get("window")))
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._pause_req = threading.Event()
        self._parked = threading.Event()
        self._resume = threading.Event()
        self._thread: threading.Thread | None = None
        self._rr = 0
        self._emitted = 0
        self._opened = False
        self._lock = threading.RLock()
        logic.ctx.error = self._count_error

    # wiring ---------------------------------------------------------------

    def wire(self, inputs: dict[str, EdgeQueue], outputs: dict[str, EdgeQueue]) -> None:
        with self._lock:
            for q in inputs.values():
                q.on_put = self._wake.set
            self.inputs = dict(inputs)
            self.outputs = dict(outputs)
        self._wake.set()

    def _count_error(self, msg: str) -> None:
        self.counters["errors"] += 1
        log.debug("processor %s error: %s", self.id, msg)

    # lifecycle ------------------------------------------------------------

    def open(self) -> None:
        """Deploy-time checks (files readable, commands present); idempotent."""
        if not self._opened:
            self.logic.open()
            self._opened = True

    def start(self, paused: bool = False) -> None:
        if self._thread is not None or self.state == STOPPED:
            raise IllegalTransition(self.id, self.state, "start")
        paused = paused or self._pause_req.is_set()
        self.open()
        if paused:
            self._pause_req.set()
            self.state = PAUSED
        else:
            self.state = RUNNING
        self._thread = threading.Thread(target=self._run, name=f"proc-{self.id}", daemon=True)
        self._thread.start()
        if paused:
            self._parked.wait(5.0)

    def pause(self, timeout: float = 10.0) -> None:
        if self.state == PAUSED:
            return
        if self.state == STOPPED:
            raise IllegalTransition(self.id, self.state, "pause")
        self._pause_req.set()
        self._resume.clear()
        if self.state == DEPLOYED:
            self.state = PAUSED
            return
        self.state = PAUSED
        self._wake.set()
        if not self._parked.wait(timeout):
            log.warning("processor %s did not park within %.1fs", self.id, timeout)

    def resume(self) -> None:
        if self.state == RUNNING:
            return
        if self.state != PAUSED:
            raise IllegalTransition(self.id, self.state, "resume")
        self._pause_req.clear()
        if self._thread is None:
            # paused before it ever started: back to plain deployed
            self.state = DEPLOYED
            return
        self.state = RUNNING
        self.logic.on_resume()
        self._resume.set()
        self._wake.set()

    def stop(self) -> None:
        self._stop.set()
        self._resume.set()
        self._wake.set()
        if self._thread is not None and self._thread is not threading.current_thread():
            self._thread.join(timeout=10)
        if self.state != STOPPED:
            self.logic.close()
        self.state = STOPPED

    # data path ------------------------------------------------------------

    def _route(self, batch: DataBatch, error: bool = False) -> None:
        for key in self.outputs:
            to_error_edge = self.error_edge is not None and key.endswith("->" + str(self.error_edge))
            if to_error_edge != error:
                continue
            self.pending.append((key, batch))
        if not error:
            self.counters["out"] += 1
            self.counters["tuples_out"] += batch.count

    def _emit(self, item: Any) -> None:
        self._emitted += 1
        model = self.spec.output_model
        if model == DataModelKind.STREAM:
            for b in self._acc.add(item):
                self._route(b)
        elif model == DataModelKind.FILE:
            batch = file_to_batch(item)
            remove_file(item)
            self._route(batch)
        else:
            self._route(item)

    def emit_error(self, batch: DataBatch) -> None:
        self._route(batch, error=True)

    def _flush_pending(self) -> bool:
        while self.pending:
            key, batch = self.pending[0]
            q = self.outputs.get(key)
            if q is None:
                self.pending.popleft()
                continue
            if not q.put(batch, timeout=0):
                return False
            self.pending.popleft()
        return True

    def _take(self) -> tuple[str, DataBatch] | None:
        keys = list(self.inputs)
        n = len(keys)
        for i in range(n):
            key = keys[(self._rr + i) % n]
            if key in self.eos_seen:
                continue
            batch = self.inputs[key].get_nowait()
            if batch is not None:
                self._rr = (self._rr + i + 1) % n
                return key, batch
        return None

    def _handle(self, key: str, batch: DataBatch) -> None:
        if batch.is_eos:
            self.eos_seen.add(key)
            return
        self.counters["in"] += 1
        self.counters["tuples_in"] += batch.count
        emitted_before = self._emitted
        try:
            model = self.spec.input_model
            if model == DataModelKind.STREAM:
                for t in batch_to_stream(batch):
                    self.logic.on_item(t, self._emit)
            elif model == DataModelKind.FILE:
                ref = batch_to_file(batch, self.logic.ctx.workdir)
                try:
                    self.logic.on_item(ref, self._emit)
                finally:
                    remove_file(ref)
            else:
                self.logic.on_item(batch, self._emit)
        except Exception as exc:
            self.counters["errors"] += 1
            log.warning("processor %s failed on batch %s: %s", self.id, batch.id, exc)
            if self.error_edge:
                self.emit_error(batch.with_attributes(**{"error.message": str(exc)[:500]}))
        # work scales with the tuples a batch carries in or fans out to (opaque batches count once)
        units = max(batch.count, self._emitted - emitted_before, 1)
        self.throttle.charge(self.work_us * units, self._stop)

    def _all_inputs_closed(self) -> bool:
        if self.logic.is_source:
            return self.logic.finished
        return bool(self.inputs) and set(self.inputs) <= self.eos_seen

    def _close(self) -> None:
        if not self.logic.on_close(self._emit):
            return
        if self._acc is not None:
            for b in self._acc.close():
                self._route(b)
        eos = DataBatch.eos()
        for key in self.outputs:
            self.pending.append((key, eos))
        self.closed = True

    def _park(self) -> None:
        # partial windows leave with the processor's outputs, so no tuples stay behind in memory
        if self._acc is not None:
            for b in self._acc.flush():
                self._route(b)
        self._flush_pending()
        self._parked.set()
        while self._pause_req.is_set() and not self._stop.is_set():
            self._resume.wait(0.2)
        self._parked.clear()

    def _run(self) -> None:
        source_emit_charge = self.logic.is_source and self.work_us > 0
        self._emitted = 0
        while not self._stop.is_set():
            self._wake.clear()
            if self._pause_req.is_set():
                self._park()
                continue
            if self.pending and not self._flush_pending():
                self._wake.wait(0.02)
                continue
            got = self._take()
            if got is not None:
                self._handle(*got)
            before = self._emitted
            next_due = None
            try:
                next_due = self.logic.poll(self._emit)
            except Exception as exc:
                self.counters["errors"] += 1
                log.warning("processor %s poll failed: %s", self.id, exc)
            if source_emit_charge and self._emitted > before:
                self.throttle.charge(self.work_us * (self._emitted - before), self._stop)
            if self._acc is not None:
                for b in self._acc.tick():
                    self._route(b)
            if not self.closed and self._all_inputs_closed():
                self._close()
            if got is None and not self.pending:
                wait = 0.05 if next_due is None else max(0.0, min(next_due, 0.05))
                if wait > 0:
                    self._wake.wait(wait)

    # introspection ----------------------------------------------------------

    def pending_for(self, key: str) -> list[DataBatch]:
        return [b for k, b in self.pending if k == key]

    def drop_pending(self, key: str) -> None:
        self.pending = deque((k, b) for k, b in self.pending if k != key)

    def export_state(self) -> dict:
        """What a migrated copy needs to carry on where this one stopped."""
        return {
            "logic": self.logic.snapshot(),
            "eos_seen": sorted(self.eos_seen),
            "closed": self.closed,
            "counters": dict(self.counters),
        }

    def restore_state(self, state: dict) -> None:
        self.logic.restore(state.get("logic", {}))
        self.eos_seen = set(state.get("eos_seen", ()))
        self.closed = bool(state.get("closed", False))
        for k, v in state.get("counters", {}).items():
            if k in self.counters:
                self.counters[k] = int(v)

    def status(self) -> dict:
        return {
            "id": self.id,
            "kind": self.spec.kind,
            "state": self.state,
            "counters": dict(self.counters),
            "pending": len(self.pending),
            "closed": self.closed,
            "extra": self.logic.metrics(),
        }
