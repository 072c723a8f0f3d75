"""Exception types; each maps to a CLI exit code."""


class PlanningError(Exception):
    exit_code = 3


class PlanningTimeout(PlanningError):
    pass


class InvalidWaypoint(PlanningError):
    pass


class InfeasibleParametrization(Exception):
    exit_code = 4


class StateDivergence(Exception):
    exit_code = 5

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (t={t:.6f} s)")
        self.t = t


class FlatnessSingularity(ValueError):
    pass


class ScenarioError(Exception):
    exit_code = 2
