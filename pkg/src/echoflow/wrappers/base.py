"""Processor logic contract and the kind registry."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..flowmodel import DataModelKind, ProcessorSpec

STREAM = DataModelKind.STREAM
MICROBATCH = DataModelKind.MICROBATCH
FILE = DataModelKind.FILE


class ProcessorConfigError(ValueError):
    pass


class UnknownKind(ProcessorConfigError):
    pass


@dataclass
class ProcessorContext:
    processor_id: str
    dataflow: str
    workdir: Path
    device: str = ""
    error: Callable[[str], None] = lambda msg: None
    log: logging.Logger = field(default_factory=lambda: logging.getLogger("echoflow.processor"))


class ProcessorLogic:
    """User logic run by the engine.

    ``on_item`` receives items in the processor's declared input model
    (EventTuple, DataBatch or FileRef) and calls ``emit`` with items in its
    output model. Sources leave ``input_models`` empty and produce from
    ``poll``.
    """

    input_models: tuple[DataModelKind, ...] = (MICROBATCH,)
    output_models: tuple[DataModelKind, ...] = (MICROBATCH,)
    is_source = False

    def __init__(self, spec: ProcessorSpec, ctx: ProcessorContext):
        self.spec = spec
        self.ctx = ctx
        self.config = spec.config

    def open(self) -> None:
        pass

    def on_item(self, item: Any, emit: Callable[[Any], None]) -> None:
        raise NotImplementedError

    def poll(self, emit: Callable[[Any], None]) -> float | None:
        """Periodic hook; returns seconds until it next wants to run (None = idle)."""
        return None

    @property
    def finished(self) -> bool:
        """Sources report True once their input is exhausted."""
        return False

    def on_close(self, emit: Callable[[Any], None]) -> bool:
        """End of stream on every input. Return False to be asked again later."""
        return True

    def on_resume(self) -> None:
        pass

    def snapshot(self) -> dict:
        return {}

    def restore(self, state: dict) -> None:
        pass

    def metrics(self) -> dict:
        return {}

    def close(self) -> None:
        pass


_REGISTRY: dict[str, type[ProcessorLogic]] = {}


def register(kind: str):
    def deco(cls: type[ProcessorLogic]) -> type[ProcessorLogic]:
        _REGISTRY[kind] = cls
        return cls

    return deco


def kinds() -> list[str]:
    return sorted(_REGISTRY)


def resolve(kind: str) -> type[ProcessorLogic]:
    try:
        return _REGISTRY[kind]
    except KeyError:
        raise UnknownKind(f"unknown processor kind {kind!r}") from None


def check_processor(spec: ProcessorSpec) -> None:
    """Kind exists and the model annotations are ones its logic can run with."""
    cls = resolve(spec.kind)
    if cls.is_source:
        # sources have no input port; their input annotation is not consulted
        pass
    elif spec.input_model not in cls.input_models:
        allowed = ", ".join(m.value for m in cls.input_models)
        raise ProcessorConfigError(
            f"processor {spec.id}: kind {spec.kind} cannot take input model {spec.input_model.value} (allowed: {allowed})"
        )
    if spec.output_model not in cls.output_models:
        allowed = ", ".join(m.value for m in cls.output_models)
        raise ProcessorConfigError(
            f"processor {spec.id}: kind {spec.kind} cannot emit output model {spec.output_model.value} (allowed: {allowed})"
        )


def instantiate(spec: ProcessorSpec, ctx: ProcessorContext) -> ProcessorLogic:
    check_processor(spec)
    return resolve(spec.kind)(spec, ctx)
