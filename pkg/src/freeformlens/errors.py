"""Exception hierarchy with machine-readable codes and CLI exit codes.

Exit code convention: 2 config error, 3 condition violation (a design
precondition fails on the given inputs), 4 solver failure (numerics broke
down), 5 trace tolerance failure.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONDITION = 3
EXIT_SOLVER = 4
EXIT_TRACE = 5


class FreeformLensError(Exception):
    """Base error. ``code`` is stable and machine readable."""

    code = "error"
    exit_code = EXIT_SOLVER

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class InvalidInputError(FreeformLensError):
    code = "invalid_input"
    exit_code = EXIT_CONFIG


class TotalInternalReflectionError(FreeformLensError):
    code = "total_internal_reflection"
    exit_code = EXIT_CONDITION


class DomainError(FreeformLensError):
    code = "domain_error"
    exit_code = EXIT_CONFIG


class NotConservativeError(FreeformLensError):
    code = "not_conservative"
    exit_code = EXIT_CONDITION


class CurlViolationError(FreeformLensError):
    code = "curl_violation"
    exit_code = EXIT_CONDITION


class CompatibilityViolationError(FreeformLensError):
    code = "compatibility_violation"
    exit_code = EXIT_CONDITION


class MapConditionError(FreeformLensError):
    """Imaging map fails an integrability condition on the sampled grid."""

    code = "map_condition_violation"
    exit_code = EXIT_CONDITION


class BoundViolationError(FreeformLensError):
    code = "bound_violation"
    exit_code = EXIT_CONDITION


class NonpositiveThicknessError(FreeformLensError):
    code = "nonpositive_thickness"
    exit_code = EXIT_CONDITION


class NonpositiveLambdaError(FreeformLensError):
    code = "nonpositive_lambda"
    exit_code = EXIT_CONDITION


class DegenerateDirectionError(FreeformLensError):
    code = "degenerate_direction"
    exit_code = EXIT_CONDITION


class NotCollimatedError(FreeformLensError):
    code = "not_collimated"
    exit_code = EXIT_CONFIG


class InitialConditionError(FreeformLensError):
    """Initial height outside the admissible window."""

    code = "initial_condition_out_of_window"
    exit_code = EXIT_CONDITION


class InfeasibleThicknessError(FreeformLensError):
    code = "infeasible_thickness"
    exit_code = EXIT_CONDITION


class NoIntersectionError(FreeformLensError):
    code = "no_intersection"
    exit_code = EXIT_SOLVER


class GrazingIntersectionError(FreeformLensError):
    """Root finder detected tangency: derivative vanishes at the root."""

    code = "grazing_intersection"
    exit_code = EXIT_SOLVER


class SingularStrikeMapError(FreeformLensError):
    """The map from source points to first-surface footprints folds."""

    code = "singular_strike_map"
    exit_code = EXIT_SOLVER


class PathInconsistencyError(FreeformLensError):
    code = "path_inconsistency"
    exit_code = EXIT_SOLVER


class DomainCollapseError(FreeformLensError):
    code = "domain_collapse"
    exit_code = EXIT_SOLVER


class NonInvertibleMapError(FreeformLensError):
    code = "non_invertible_map"
    exit_code = EXIT_SOLVER


class BranchCrossingError(FreeformLensError):
    code = "branch_crossing"
    exit_code = EXIT_CONDITION


class NonMonotoneError(FreeformLensError):
    code = "non_monotone"
    exit_code = EXIT_SOLVER


class DegenerateMagnificationError(FreeformLensError):
    """|alpha| too small: the profile formulas divide by alpha."""

    code = "degenerate_magnification"
    exit_code = EXIT_CONFIG


class MissError(FreeformLensError):
    code = "miss"
    exit_code = EXIT_SOLVER


class ConfigError(FreeformLensError):
    code = "config_error"
    exit_code = EXIT_CONFIG


class IoError(FreeformLensError):
    code = "io_error"
    exit_code = EXIT_CONFIG


class TraceToleranceError(FreeformLensError):
    code = "trace_tolerance"
    exit_code = EXIT_TRACE
