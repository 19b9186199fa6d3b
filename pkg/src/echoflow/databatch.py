"""DataBatch (the unit of data movement) and the stream/micro-batch/file wrappers."""

from __future__ import annotations

import base64
import json
import math
import os
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, NamedTuple

from .common import now_iso

BATCH_ID = "batch.id"
BATCH_CREATED = "batch.created"
BATCH_COUNT = "batch.count"
BATCH_EOS = "batch.eos"


class BatchFormatError(ValueError):
    pass


class BatchIntegrityError(ValueError):
    pass


class BatchIOError(OSError):
    pass


def new_batch_id() -> str:
    return uuid.uuid4().hex


@dataclass(frozen=True)
class DataBatch:
    attributes: Mapping[str, str]
    content: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))
        object.__setattr__(self, "content", bytes(self.content))

    @classmethod
    def create(cls, content: bytes = b"", count: int = 0, **attrs: str) -> "DataBatch":
        base = {BATCH_ID: new_batch_id(), BATCH_CREATED: now_iso(), BATCH_COUNT: str(count)}
        base.update(attrs)
        return cls(base, content)

    @classmethod
    def eos(cls) -> "DataBatch":
        return cls.create(b"", 0, **{BATCH_EOS: "true"})

    @property
    def id(self) -> str:
        return self.attributes[BATCH_ID]

    @property
    def count(self) -> int:
        return int(self.attributes.get(BATCH_COUNT, "0"))

    @property
    def is_eos(self) -> bool:
        return self.attributes.get(BATCH_EOS) == "true"

    def with_attributes(self, **attrs: str) -> "DataBatch":
        merged = dict(self.attributes)
        merged.update(attrs)
        return DataBatch(merged, self.content)

    def to_envelope(self) -> dict:
        return {
            "batch_id": self.id,
            "attributes": dict(self.attributes),
            "content_b64": base64.b64encode(self.content).decode("ascii"),
        }

    @classmethod
    def from_envelope(cls, env: Mapping) -> "DataBatch":
        attrs = dict(env["attributes"])
        attrs.setdefault(BATCH_ID, env["batch_id"])
        return cls(attrs, base64.b64decode(env.get("content_b64", "")))


class EventTuple(NamedTuple):
    """One reading. A plain tuple underneath: cheap to build, hash and compare."""

    name: str
    value: float | int
    unit: str = ""
    timestamp: int = 0

    def to_json(self) -> dict:
        return {"n": self.name, "v": self.value, "u": self.unit, "t": self.timestamp}

    @classmethod
    def from_json(cls, d: Mapping) -> "EventTuple":
        value = d["v"]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError("'v' must be a number")
        return cls.create(str(d["n"]), value, str(d.get("u", "")), int(d.get("t", 0)))

    @classmethod
    def create(cls, name: str, value: float | int, unit: str = "", timestamp: int = 0) -> "EventTuple":
        if timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        return cls(name, value, unit, timestamp)


@dataclass(frozen=True)
class FileRef:
    path: Path
    size_bytes: int

    @property
    def sidecar(self) -> Path:
        return sidecar_path(self.path)


@dataclass(frozen=True)
class WindowPolicy:
    mode: str = "count"
    count_n: int = 50
    duration_ms: int = 0
    flush_on_close: bool = True

    def __post_init__(self) -> None:
        if self.mode == "count":
            if self.count_n < 1:
                raise ValueError("count window needs count_n >= 1")
        elif self.mode == "time":
            if self.duration_ms < 1:
                raise ValueError("time window needs duration_ms >= 1")
        else:
            raise ValueError(f"unknown window mode {self.mode!r}")

    @classmethod
    def from_config(cls, cfg: Mapping | None) -> "WindowPolicy":
        if not cfg:
            return DEFAULT_WINDOW
        return cls(
            mode=cfg.get("mode", "count"),
            count_n=int(cfg.get("count_n", 50)),
            duration_ms=int(cfg.get("duration_ms", 0)),
            flush_on_close=bool(cfg.get("flush_on_close", True)),
        )


DEFAULT_WINDOW = WindowPolicy()


_quote = json.encoder.encode_basestring_ascii
_NUMBER = (int, float)


def _number(v: float | int) -> str:
    if type(v) is int or (type(v) is float and math.isfinite(v)):
        return repr(v)
    return json.dumps(v)


def encode_tuples(tuples: Iterable[EventTuple]) -> tuple[bytes, int]:
    # same bytes as json.dumps(t.to_json(), separators=(",", ":")) per line, without per-call setup
    q = _quote
    lines = [f'{{"n":{q(n)},"v":{v if type(v) is int else _number(v)},"u":{q(u)},"t":{int(t)}}}'
             for n, v, u, t in tuples]
    if not lines:
        return b"", 0
    return ("\n".join(lines) + "\n").encode(), len(lines)


def tuples_to_batch(tuples: Iterable[EventTuple], **attrs: str) -> DataBatch:
    content, n = encode_tuples(tuples)
    return DataBatch.create(content, n, **attrs)


class WindowAccumulator:
    """Incremental stream -> micro-batch windowing (processing time)."""

    def __init__(self, policy: WindowPolicy = DEFAULT_WINDOW, clock: Callable[[], float] = time.monotonic):
        self.policy = policy
        self.clock = clock
        self._buf: list[EventTuple] = []
        self._opened: float | None = None

    def __len__(self) -> int:
        return len(self._buf)

    def _emit(self) -> list[DataBatch]:
        if not self._buf:
            return []
        batch = tuples_to_batch(self._buf)
        self._buf = []
        self._opened = None
        return [batch]

    def add(self, item: EventTuple) -> list[DataBatch]:
        out = self.tick()
        if not self._buf:
            self._opened = self.clock()
        self._buf.append(item)
        if self.policy.mode == "count" and len(self._buf) >= self.policy.count_n:
            out += self._emit()
        return out

    def tick(self) -> list[DataBatch]:
        if self.policy.mode != "time" or self._opened is None:
            return []
        if (self.clock() - self._opened) * 1000.0 >= self.policy.duration_ms:
            return self._emit()
        return []

    def flush(self) -> list[DataBatch]:
        """Emit the partial window regardless of policy."""
        return self._emit()

    def close(self) -> list[DataBatch]:
        if self.policy.flush_on_close:
            return self._emit()
        self._buf = []
        self._opened = None
        return []


def stream_to_batch(
    events: Iterable[EventTuple],
    policy: WindowPolicy = DEFAULT_WINDOW,
    clock: Callable[[], float] = time.monotonic,
) -> list[DataBatch]:
    if policy.mode == "count":
        items = list(events)
        n = policy.count_n
        end = len(items) if policy.flush_on_close else len(items) - len(items) % n
        return [tuples_to_batch(items[i:i + n]) for i in range(0, end, n)]
    acc = WindowAccumulator(policy, clock)
    out: list[DataBatch] = []
    for ev in events:
        out += acc.add(ev)
    out += acc.close()
    return out


def batch_to_stream(batch: DataBatch) -> list[EventTuple]:
    expected = batch.count
    if expected == 0:
        if batch.content:
            raise BatchFormatError(f"batch {batch.id} is opaque (batch.count=0); it carries no tuples")
        return []
    text = batch.content.decode("utf-8")
    try:
        # fast path: one parse for the whole batch, then a bulk type check; anything
        # unusual (blank lines, coercible values, errors) goes through the exact per-line parser
        objs = json.loads("[" + text.rstrip("\n").replace("\n", ",") + "]")
        out = [EventTuple(d["n"], d["v"], d["u"], d["t"]) for d in objs]
        if len(out) != text.count("\n") + (not text.endswith("\n")) or not all(
            type(n) is str and type(v) in _NUMBER and type(u) is str and type(t) is int and t >= 0
            for n, v, u, t in out
        ):
            raise ValueError("needs the line-by-line parse")
    except (ValueError, KeyError, TypeError):
        out = _decode_lines(batch)
    if len(out) != expected:
        raise BatchIntegrityError(f"batch {batch.id}: batch.count={expected} but content holds {len(out)} tuples")
    return out


def _decode_lines(batch: DataBatch) -> list[EventTuple]:
    out = []
    for lineno, line in enumerate(batch.content.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(EventTuple.from_json(json.loads(line)))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise BatchFormatError(f"batch {batch.id}: malformed tuple on line {lineno}: {exc}") from exc
    return out


def sidecar_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".attrs.json")


def batch_to_file(batch: DataBatch, directory: str | os.PathLike, name: str | None = None) -> FileRef:
    path = Path(directory) / (name or f"{batch.id}.bin")
    try:
        path.write_bytes(batch.content)
        sidecar_path(path).write_text(json.dumps(dict(batch.attributes), sort_keys=True))
    except OSError as exc:
        raise BatchIOError(f"cannot write batch to {path}: {exc}") from exc
    return FileRef(path, len(batch.content))


def file_to_batch(ref: FileRef | str | os.PathLike) -> DataBatch:
    path = ref.path if isinstance(ref, FileRef) else Path(ref)
    try:
        content = path.read_bytes()
    except OSError as exc:
        raise BatchIOError(f"cannot read batch file {path}: {exc}") from exc
    side = sidecar_path(path)
    if side.exists():
        attrs = json.loads(side.read_text())
        # a partial sidecar from an external program still yields a well-formed batch
        attrs.setdefault(BATCH_ID, new_batch_id())
        attrs.setdefault(BATCH_CREATED, now_iso())
        attrs.setdefault(BATCH_COUNT, "0")
        return DataBatch({str(k): str(v) for k, v in attrs.items()}, content)
    # externally produced file: opaque content
    return DataBatch.create(content, 0)


def remove_file(ref: FileRef | str | os.PathLike) -> None:
    path = ref.path if isinstance(ref, FileRef) else Path(ref)
    for p in (path, sidecar_path(path)):
        try:
            p.unlink()
        except FileNotFoundError:
            pass
