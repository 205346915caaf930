"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems exit 1,
domain and planning problems exit 2.
"""


class TetherRiskError(Exception):
    """Base class for all library errors."""


class ValidationError(TetherRiskError, ValueError):
    """Input violates a documented invariant (bad map, bad path, bad file)."""


class DomainError(TetherRiskError, ValueError):
    """Arguments fall outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Velocity control requested too close to the elevation singularity."""


class PlanningError(TetherRiskError, RuntimeError):
    """A planning query cannot be answered."""


class BudgetError(PlanningError):
    """The exhaustive planner refused a map that exceeds its vertex budget."""
