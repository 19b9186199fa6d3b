"""Embedded mini-CEP: a pipeline of filter, scale, window_agg and pattern_count stages."""

from __future__ import annotations

import operator
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from ..databatch import EventTuple
from .base import STREAM, ProcessorConfigError, ProcessorLogic, register

_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}
_FIELDS = {"v": "value", "value": "value", "n": "name", "name": "name", "u": "unit", "unit": "unit", "t": "timestamp"}
_AGGS = {
    "avg": lambda xs: sum(xs) / len(xs),
    "min": min,
    "max": max,
    "count": len,
    "sum": sum,
}


class MissingField(KeyError):
    pass


def field_value(t: EventTuple, name: str) -> Any:
    attr = _FIELDS.get(name)
    if attr is None:
        raise MissingField(name)
    return getattr(t, attr)


@dataclass(frozen=True)
class Filter:
    field: str
    op: str
    const: Any

    def matches(self, t: EventTuple) -> bool:
        return _OPS[self.op](field_value(t, self.field), self.const)


@dataclass(frozen=True)
class Scale:
    field: str
    factor: float
    offset: float = 0.0


@dataclass(frozen=True)
class WindowAgg:
    count_n: int
    agg: str
    field: str = "v"


@dataclass(frozen=True)
class PatternCount:
    predicate: Filter
    count_n: int
    threshold: int
    group_by: str | None = None


Stage = Filter | Scale | WindowAgg | PatternCount


def parse_stage(raw: dict) -> Stage:
    op = raw.get("op")
    try:
        if op == "filter":
            stage = Filter(str(raw["field"]), str(raw["cmp"]), raw["value"])
            if stage.op not in _OPS:
                raise ProcessorConfigError(f"unknown comparison {stage.op!r}")
        elif op == "scale":
            stage = Scale(str(raw.get("field", "v")), float(raw.get("factor", 1.0)), float(raw.get("offset", 0.0)))
        elif op == "window_agg":
            stage = WindowAgg(int(raw["n"]), str(raw["agg"]), str(raw.get("field", "v")))
            if stage.agg not in _AGGS:
                raise ProcessorConfigError(f"unknown aggregate {stage.agg!r}")
            if stage.count_n < 1:
                raise ProcessorConfigError("window_agg needs n >= 1")
        elif op == "pattern_count":
            pred = parse_stage(dict(raw["predicate"], op="filter"))
            stage = PatternCount(pred, int(raw["n"]), int(raw["k"]), raw.get("group_by"))
            if stage.count_n < 1 or stage.threshold < 1:
                raise ProcessorConfigError("pattern_count needs n >= 1 and k >= 1")
        else:
            raise ProcessorConfigError(f"unknown CEP stage {op!r}")
    except KeyError as exc:
        raise ProcessorConfigError(f"CEP stage {op!r} missing {exc}") from None
    if isinstance(stage, (Filter, Scale, WindowAgg)) and not stage.field:
        raise ProcessorConfigError("CEP stage field names must be non-empty")
    return stage


def parse_query(raw: Sequence[dict]) -> list[Stage]:
    if not raw:
        raise ProcessorConfigError("CEP query needs at least one stage")
    return [parse_stage(s) for s in raw]


class _StageRunner:
    def __init__(self, stage: Stage, on_error: Callable[[str], None]):
        self.stage = stage
        self.on_error = on_error
        self.buf: list[EventTuple] = []
        self.recent: deque = deque()
        self.group_key: Any = None
        self.group_hits = 0
        self.group_last: EventTuple | None = None

    def push(self, t: EventTuple) -> list[EventTuple]:
        s = self.stage
        try:
            if isinstance(s, Filter):
                return [t] if s.matches(t) else []
            if isinstance(s, Scale):
                if _FIELDS.get(s.field) != "value":
                    raise MissingField(s.field)
                return [EventTuple(t.name, t.value * s.factor + s.offset, t.unit, t.timestamp)]
            if isinstance(s, WindowAgg):
                field_value(t, s.field)
                self.buf.append(t)
                if len(self.buf) < s.count_n:
                    return []
                window, self.buf = self.buf, []
                value = _AGGS[s.agg]([field_value(x, s.field) for x in window])
                last = window[-1]
                return [EventTuple(f"{s.agg}({s.field})", value, last.unit, last.timestamp)]
            return self._pattern(s, t)
        except MissingField as exc:
            self.on_error(f"missing field {exc.args[0]!r}")
            return []
        except TypeError as exc:
            self.on_error(str(exc))
            return []

    def _pattern(self, s: PatternCount, t: EventTuple) -> list[EventTuple]:
        hit = s.predicate.matches(t)
        if s.group_by is None:
            self.recent.append(hit)
            if len(self.recent) > s.count_n:
                self.recent.popleft()
            hits = sum(self.recent)
            if hit and hits >= s.threshold:
                return [EventTuple("alert", hits, "count", t.timestamp)]
            return []
        key = field_value(t, s.group_by)
        out = []
        if self.group_last is not None and key != self.group_key:
            out = self._close_group(s)
        self.group_key = key
        self.group_last = t
        self.group_hits += int(hit)
        return out

    def _close_group(self, s: PatternCount) -> list[EventTuple]:
        if self.group_last is None:
            return []
        self.recent.append(self.group_hits)
        if len(self.recent) > s.count_n:
            self.recent.popleft()
        hits = sum(self.recent)
        last, key = self.group_last, self.group_key
        self.group_hits = 0
        self.group_last = None
        if hits >= s.threshold:
            return [EventTuple("alert", hits, str(key), last.timestamp)]
        return []

    def close(self) -> list[EventTuple]:
        # partial aggregation windows are discarded; an open pattern group is complete
        s = self.stage
        self.buf = []
        if isinstance(s, PatternCount) and s.group_by is not None:
            return self._close_group(s)
        return []


class CepEngine:
    """Incremental evaluation of a stage pipeline."""

    def __init__(self, stages: Sequence[Stage], on_error: Callable[[str], None] | None = None):
        self.errors = 0

        def err(msg: str) -> None:
            self.errors += 1
            if on_error:
                on_error(msg)

        self.runners = [_StageRunner(s, err) for s in stages]

    def _run_from(self, idx: int, items: list[EventTuple]) -> list[EventTuple]:
        for runner in self.runners[idx:]:
            nxt: list[EventTuple] = []
            for t in items:
                nxt += runner.push(t)
            items = nxt
            if not items:
                break
        return items

    def push(self, t: EventTuple) -> list[EventTuple]:
        return self._run_from(0, [t])

    def close(self) -> list[EventTuple]:
        out: list[EventTuple] = []
        for i, runner in enumerate(self.runners):
            # whatever a stage flushes still flows through the stages after it
            out += self._run_from(i + 1, runner.close())
        return out


def cep_process(query: Sequence[dict] | Sequence[Stage], events: Iterable[EventTuple]) -> list[EventTuple]:
    stages = [s if not isinstance(s, dict) else parse_stage(s) for s in query]
    if not stages:
        raise ProcessorConfigError("CEP query needs at least one stage")
    engine = CepEngine(stages)
    out: list[EventTuple] = []
    for t in events:
        out += engine.push(t)
    out += engine.close()
    return out


@register("cep")
class CepProcessor(ProcessorLogic):
    input_models = (STREAM,)
    output_models = (STREAM,)

    def __init__(self, spec, ctx):
        super().__init__(spec, ctx)
        self.engine = CepEngine(parse_query(self.config.get("query", [])), on_error=lambda m: self.ctx.error(m))

    def on_item(self, t: EventTuple, emit) -> None:
        for out in self.engine.push(t):
            emit(out)

    def on_close(self, emit) -> bool:
        for out in self.engine.close():
            emit(out)
        return True

    def metrics(self) -> dict:
        return {"cep_errors": self.engine.errors}
