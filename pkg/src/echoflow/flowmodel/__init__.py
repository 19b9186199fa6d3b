from pathlib import Path

from .graph import (
    PULL,
    PUSH,
    CutEdge,
    FragmentEntry,
    FragmentPlan,
    MappingError,
    MigrationSet,
    UnschedulableLink,
    affected_edges,
    edge_cut,
    full_reachability,
    graph_diff,
    link_id,
    reachability_from_sets,
    topological_order,
)
from .spec import (
    DataflowSpec,
    DataflowValidationError,
    DataModelKind,
    EdgeSpec,
    ProcessorSpec,
    ResourceDemand,
    cycle_members,
    edge_key,
    from_json,
    parse_and_validate,
    processor_from_json,
    split_edge_key,
)

SCHEMA_PATH = Path(__file__).with_name("dataflow.schema.json")

__all__ = [
    "PULL",
    "PUSH",
    "SCHEMA_PATH",
    "CutEdge",
    "DataModelKind",
    "DataflowSpec",
    "DataflowValidationError",
    "EdgeSpec",
    "FragmentEntry",
    "FragmentPlan",
    "MappingError",
    "MigrationSet",
    "ProcessorSpec",
    "ResourceDemand",
    "UnschedulableLink",
    "affected_edges",
    "cycle_members",
    "edge_cut",
    "edge_key",
    "from_json",
    "full_reachability",
    "graph_diff",
    "link_id",
    "parse_and_validate",
    "processor_from_json",
    "reachability_from_sets",
    "split_edge_key",
    "topological_order",
]
