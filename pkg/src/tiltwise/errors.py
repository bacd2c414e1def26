"""Exception and warning classes shared across the package."""


class TiltwiseError(Exception):
    """Base class for all errors raised by tiltwise."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class SchemaError(TiltwiseError):
    kind = "schema_error"


class ParseError(TiltwiseError):
    kind = "parse_error"


class ValidationError(TiltwiseError):
    kind = "validation_error"


class ConfigError(TiltwiseError):
    kind = "config_error"


class FitError(TiltwiseError):
    kind = "fit_error"


class SeparationError(FitError):
    kind = "separation_error"


class ConvergenceError(FitError):
    kind = "convergence_error"


class DimensionError(TiltwiseError):
    kind = "dimension_error"


class EstimandUndefinedError(TiltwiseError):
    kind = "estimand_undefined"


class SolverError(TiltwiseError):
    kind = "solver_error"


class InferenceError(TiltwiseError):
    kind = "inference_error"


class TiltwiseWarning(UserWarning):
    """Non-fatal condition worth surfacing in run metadata."""
