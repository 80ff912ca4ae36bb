"""Layered quantum key distribution: structures, state construction, protocol simulation and planning."""

from .keystructure import LayeredKeyStructure, StructureError, load_structure, validate_structure
from .plan import ConstructionPlan, PlanError, flat_plan, load_plan
from .protocol import ProtocolConfig, run_protocol
from .quantum import Construction, SparseState, build_from_plan, flat_construct
from .rates import RateReport, Schedule, layered_rates

__all__ = [
    "Construction", "ConstructionPlan", "LayeredKeyStructure", "PlanError", "ProtocolConfig",
    "RateReport", "Schedule", "SparseState", "StructureError", "build_from_plan", "flat_construct",
    "flat_plan", "layered_rates", "load_plan", "load_structure", "run_protocol", "validate_structure",
]
