"""Motion-risk indexing, risk-aware planning and tethered UAV motion tools."""

from .errors import (
    BudgetError,
    DomainError,
    PlanningError,
    SingularityError,
    TetherRiskError,
    ValidationError,
)
from .grid import GraphConfig, GridMap, load_map, save_map

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "DomainError",
    "GraphConfig",
    "GridMap",
    "PlanningError",
    "SingularityError",
    "TetherRiskError",
    "ValidationError",
    "load_map",
    "save_map",
]
