"""Obstacle-aware planning, time parametrization and attitude compensation for a
multirotor carrying a serial arm."""

from .exceptions import (FlatnessSingularity, InfeasibleParametrization, InvalidWaypoint,
                         PlanningError, PlanningTimeout, ScenarioError, StateDivergence)

__all__ = [
    "FlatnessSingularity", "InfeasibleParametrization", "InvalidWaypoint", "PlanningError",
    "PlanningTimeout", "ScenarioError", "StateDivergence",
]
