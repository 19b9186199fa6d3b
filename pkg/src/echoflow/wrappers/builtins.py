"""Built-in source, transform and sink processors."""

from __future__ import annotations

import os
import threading
import time
from pathlib import Path

from ..databatch import DataBatch, EventTuple
from .base import FILE, MICROBATCH, STREAM, ProcessorConfigError, ProcessorLogic, register
from .senml import MalformedRecord, parse_record

ALL_MODELS = (STREAM, MICROBATCH, FILE)


@register("builtin:source_replay")
class SourceReplay(ProcessorLogic):
    """Replays a SenML file at a fixed record rate (0 = as fast as possible)."""

    is_source = True
    input_models = ()
    output_models = (STREAM, MICROBATCH)
    MAX_PER_POLL = 500

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.path = self.config.get("file")
        self.rate = float(self.config.get("rate", 0) or 0)
        self.loop = bool(self.config.get("loop", False))
        self.limit = self.config.get("limit")
        self.raw = spec.output_model == MICROBATCH
        self.batch_records = int(self.config.get("batch_records", 50))
        self.lines: list[str] = []
        self.pos = 0
        self.emitted = 0
        self.tuples = 0
        self._t0 = None

    def open(self) -> None:
        if not self.path:
            raise ProcessorConfigError(f"processor {self.spec.id}: source_replay needs 'file'")
        try:
            with open(self.path) as fh:
                self.lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        except OSError as exc:
            raise ProcessorConfigError(f"processor {self.spec.id}: cannot read {self.path}: {exc}") from exc
        if self.limit is None and self.loop:
            raise ProcessorConfigError(f"processor {self.spec.id}: loop needs a 'limit'")

    @property
    def total(self) -> int:
        if self.limit is not None:
            return int(self.limit) if (self.loop or int(self.limit) <= len(self.lines)) else len(self.lines)
        return len(self.lines)

    @property
    def finished(self) -> bool:
        return self.emitted >= self.total

    def on_resume(self) -> None:
        self._t0 = None

    def _due(self, now: float) -> int:
        if self.rate <= 0:
            return self.MAX_PER_POLL
        if self._t0 is None:
            self._t0 = now - self.emitted / self.rate
        return int((now - self._t0) * self.rate) - self.emitted

    def _next_line(self) -> str:
        line = self.lines[self.pos % len(self.lines)]
        self.pos += 1
        return line

    def poll(self, emit) -> float | None:
        if self.finished or not self.lines:
            return None
        n = min(self._due(time.monotonic()), self.MAX_PER_POLL, self.total - self.emitted)
        if self.raw:
            chunk = []
            for _ in range(max(n, 0)):
                chunk.append(self._next_line())
                self.emitted += 1
                if len(chunk) >= self.batch_records:
                    emit(DataBatch.create(("\n".join(chunk) + "\n").encode(), 0, **{"senml.records": str(len(chunk))}))
                    chunk = []
            if chunk:
                emit(DataBatch.create(("\n".join(chunk) + "\n").encode(), 0, **{"senml.records": str(len(chunk))}))
        else:
            for _ in range(max(n, 0)):
                line = self._next_line()
                self.emitted += 1
                try:
                    tuples = parse_record(line)
                except MalformedRecord as exc:
                    self.ctx.error(f"record {self.pos}: {exc}")
                    continue
                for t in tuples:
                    self.tuples += 1
                    emit(t)
        if self.rate <= 0:
            return 0.0
        return max(0.0, (self.emitted + 1) / self.rate - (time.monotonic() - self._t0))

    def snapshot(self) -> dict:
        return {"pos": self.pos, "emitted": self.emitted, "tuples": self.tuples}

    def restore(self, state: dict) -> None:
        self.pos = int(state.get("pos", 0))
        self.emitted = int(state.get("emitted", 0))
        self.tuples = int(state.get("tuples", 0))
        self._t0 = None

    def metrics(self) -> dict:
        return {"records_emitted": self.emitted, "tuples_emitted": self.tuples, "total": self.total}


@register("builtin:parse_senml")
class ParseSenml(ProcessorLogic):
    """Opaque SenML lines in, tuples out; bad records are skipped and counted."""

    input_models = (MICROBATCH,)
    output_models = (STREAM,)

    def on_item(self, batch: DataBatch, emit) -> None:
        for lineno, line in enumerate(batch.content.decode("utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                tuples = parse_record(line)
            except MalformedRecord as exc:
                self.ctx.error(f"batch {batch.id} line {lineno}: {exc}")
                continue
            for t in tuples:
                emit(t)


@register("builtin:annotate")
class Annotate(ProcessorLogic):
    input_models = (MICROBATCH,)
    output_models = (MICROBATCH,)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        attrs = dict(self.config.get("attributes", {}))
        if "key" in self.config:
            attrs[str(self.config["key"])] = str(self.config.get("val", ""))
        if not attrs:
            raise ProcessorConfigError(f"processor {spec.id}: annotate needs 'key'/'val' or 'attributes'")
        self.attrs = {str(k): str(v) for k, v in attrs.items()}

    def on_item(self, batch: DataBatch, emit) -> None:
        emit(batch.with_attributes(**self.attrs))


@register("builtin:identity")
class Identity(ProcessorLogic):
    input_models = ALL_MODELS
    output_models = ALL_MODELS

    def on_item(self, item, emit) -> None:
        emit(item)


@register("builtin:distinct_count")
class DistinctCount(ProcessorLogic):
    """Running count of distinct tuple names, reported every ``every`` tuples."""

    input_models = (STREAM,)
    output_models = (STREAM,)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.every = int(self.config.get("every", 10))
        self.names: set[str] = set()
        self.seen = 0

    def on_item(self, t: EventTuple, emit) -> None:
        self.names.add(t.name)
        self.seen += 1
        if self.seen % self.every == 0:
            emit(EventTuple("distinct", len(self.names), "count", t.timestamp))


class _Sink(ProcessorLogic):
    input_models = (MICROBATCH,)
    output_models = ALL_MODELS

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.batches = 0
        self.tuples = 0
        self.log_path = self.config.get("log")
        self._lock = threading.Lock()

    def _log(self, batch: DataBatch) -> None:
        if self.log_path:
            with open(self.log_path, "a") as fh:
                fh.write(f"{time.time():.3f}\t{batch.count}\t{batch.id}\n")

    def on_item(self, batch: DataBatch, emit) -> None:
        with self._lock:
            self.batches += 1
            self.tuples += batch.count
        self._log(batch)

    def on_close(self, emit) -> bool:
        if self.log_path:
            with open(self.log_path, "a") as fh:
                fh.write(f"{time.time():.3f}\tEOS\t-\n")
        return True

    def snapshot(self) -> dict:
        return {"batches": self.batches, "tuples": self.tuples}

    def restore(self, state: dict) -> None:
        self.batches = int(state.get("batches", 0))
        self.tuples = int(state.get("tuples", 0))

    def metrics(self) -> dict:
        return {"total_batches": self.batches, "total_tuples": self.tuples}


@register("builtin:sink_count")
class SinkCount(_Sink):
    pass


@register("builtin:sink_file")
class SinkFile(_Sink):
    """Appends batch content to ``path``; an arrival log goes to ``path``.log."""

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.path = self.config.get("path")
        if not self.path:
            raise ProcessorConfigError(f"processor {spec.id}: sink_file needs 'path'")
        if not self.log_path:
            self.log_path = str(self.path) + ".log"

    def open(self) -> None:
        parent = Path(self.path).parent
        if not parent.is_dir() or not os.access(parent, os.W_OK):
            raise ProcessorConfigError(f"processor {self.spec.id}: cannot write to {self.path}")

    def on_item(self, batch: DataBatch, emit) -> None:
        with open(self.path, "ab") as fh:
            fh.write(batch.content)
        super().on_item(batch, emit)
