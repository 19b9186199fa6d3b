"""Processor implementations. Importing this package registers every kind."""

from . import bridge, builtins, cep, execwrap  # noqa: F401  (registration side effects)
from .base import (
    ProcessorConfigError,
    ProcessorContext,
    ProcessorLogic,
    UnknownKind,
    check_processor,
    instantiate,
    kinds,
    resolve,
)
from .bridge import BridgeSpec
from .cep import CepEngine, cep_process, parse_query
from .execwrap import ExecFailed, ExecSpec, exec_process

__all__ = [
    "BridgeSpec",
    "CepEngine",
    "ExecFailed",
    "ExecSpec",
    "ProcessorConfigError",
    "ProcessorContext",
    "ProcessorLogic",
    "UnknownKind",
    "cep_process",
    "check_processor",
    "exec_process",
    "instantiate",
    "kinds",
    "parse_query",
    "resolve",
]
