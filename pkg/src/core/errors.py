from typing import List, Optional, Tuple


class SplineError(Exception):
    """Base class for every failure raised by the spline toolkit"""

    exit_code = 1
    kind = 'spline_error'

    def to_dict(self) -> dict:
        return {'error': self.kind, 'message': str(self)}


class ChartError(SplineError):
    """A point is not admissible in the chart of its manifold"""

    kind = 'chart_error'


class ProblemValidationError(SplineError):
    """A problem description is malformed; carries (location, message) pairs"""

    exit_code = 2
    kind = 'validation_error'

    def __init__(self, message: str, locations: Optional[List[Tuple[str, str]]] = None):
        super().__init__(message)
        self.locations = locations or []

    def to_dict(self) -> dict:
        data = super().to_dict()
        data['locations'] = [{'field': loc, 'message': msg} for loc, msg in self.locations]
        return data


class GridError(SplineError):
    """Knot times cannot be placed on the requested grid"""

    exit_code = 2
    kind = 'grid_error'

    def __init__(self, message: str, suggested_grid: Optional[int] = None):
        super().__init__(message)
        self.suggested_grid = suggested_grid

    def to_dict(self) -> dict:
        data = super().to_dict()
        data['suggested_grid'] = self.suggested_grid
        return data


class InfeasibleGridError(GridError):
    """Velocity elimination would overwrite a pinned knot node"""

    kind = 'infeasible_grid'


class SingularSystemError(SplineError):
    exit_code = 3
    kind = 'singular_system'


class CountMismatchError(SplineError):
    """Constraint families do not add up to a square system"""

    kind = 'count_mismatch'


class ConditioningError(SplineError):
    exit_code = 3
    kind = 'conditioning'


class MaxIterExceeded(SplineError):
    """Optimizer stopped before reaching the gradient tolerance"""

    exit_code = 4
    kind = 'max_iter_exceeded'

    def __init__(self, message: str, curve=None, report=None):
        super().__init__(message)
        self.curve = curve
        self.report = report
