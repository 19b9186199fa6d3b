from .config import Caps, ConfigError, DeviceConfig
from .service import (
    AgentError,
    DeviceService,
    DuplicateDevice,
    InsufficientCapacity,
    ProcessLauncher,
    SpawnFailed,
    UnknownWorker,
    WorkerSandbox,
)

__all__ = [
    "AgentError",
    "Caps",
    "ConfigError",
    "DeviceConfig",
    "DeviceService",
    "DuplicateDevice",
    "InsufficientCapacity",
    "ProcessLauncher",
    "SpawnFailed",
    "UnknownWorker",
    "WorkerSandbox",
]
