"""Minimum-cost repair subgraphs and random linear recoding for storage networks."""

from .model import (
    CostFunction,
    InvalidInstanceError,
    RepairFamily,
    RepairInstance,
    StructuralError,
    Subgraph,
    Topology,
    builtin_family,
    builtin_instance,
    instance_from_dict,
    load_instance,
    total_cost,
)

__version__ = "0.1.0"

__all__ = [
    "CostFunction",
    "InvalidInstanceError",
    "RepairFamily",
    "RepairInstance",
    "StructuralError",
    "Subgraph",
    "Topology",
    "builtin_family",
    "builtin_instance",
    "instance_from_dict",
    "load_instance",
    "total_cost",
    "__version__",
]
