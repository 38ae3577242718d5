from typing import Any, Dict, List, Optional


class NumericalWarning(UserWarning):
    """Warning category for resolution and hypothesis caveats"""


class GlpinError(Exception):
    """Base class for every error raised by the lab"""

    exit_code = 3


class ConfigurationError(GlpinError):
    """Invalid run configuration or geometry that does not fit the grid"""

    exit_code = 2


class PlacementError(GlpinError, TypeError):
    """Fields on different grids or with incompatible staggered placements"""

    exit_code = 2


class GeometryError(GlpinError):
    """Degenerate curves, ambiguous projections and transversality violations"""


class SolverError(GlpinError):
    """A numerical solver failed to converge or hit a singular evaluation"""

    def __init__(self, message: str, history: Optional[List[Any]] = None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConvergenceError(SolverError):
    """An extrapolation table failed its consistency checks"""

    def __init__(self, message: str, table: Optional[List[Any]] = None):
        super().__init__(message, history=table)
        self.table = self.history


class ConstructionError(GlpinError):
    """The assembled test configuration violates a winding invariant"""

    def __init__(self, message: str, location: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.location = location or {}


class ThresholdError(GlpinError, ValueError):
    """The critical-field formula is undefined for a non-positive ratio"""
