"""Exception types shared across the package."""


class QnkError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(QnkError, ValueError):
    """Invalid parameter value (wrong sign, range, or combination)."""


class ExtrapolationError(QnkError, ValueError):
    """Evaluation requested outside a tabulated grid; extrapolation is forbidden."""


class SStabilityError(QnkError, ValueError):
    """Profile violates one of the S-stability conditions; message names it."""


class TableRangeError(QnkError, ValueError):
    """Value outside the range covered by a constructed table."""


class ResolutionError(QnkError, ValueError):
    """Grid or time step too coarse to honor a stated accuracy contract."""


class PositivityError(QnkError, ValueError):
    """Constructed distribution would be negative beyond tolerance."""


class SolvabilityError(QnkError, ValueError):
    """Field equation source term violates its solvability constraint."""


class AdmissibilityError(QnkError, ValueError):
    """Boundary data or potential well violates an admissibility condition."""


class ConfigError(QnkError, ValueError):
    """Malformed or inconsistent scenario configuration."""


class FitError(QnkError, RuntimeError):
    """Not enough usable data for a requested fit."""
