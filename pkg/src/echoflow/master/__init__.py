"""Dataflow lifecycle: scheduling, deployment and live rebalancing."""

from .deployer import Deployer, DeployFailed, MigrationFailed
from .manager import ApiError, AppManager, CatalogLock, DataflowRecord
from .resources import ResourceView, WorkerView, load_view
from .scheduler import SCHEDULERS, Infeasible, first_fit, validate_mapping

__all__ = [
    "SCHEDULERS",
    "ApiError",
    "AppManager",
    "CatalogLock",
    "DataflowRecord",
    "DeployFailed",
    "Deployer",
    "Infeasible",
    "MigrationFailed",
    "ResourceView",
    "WorkerView",
    "first_fit",
    "load_view",
    "validate_mapping",
]
