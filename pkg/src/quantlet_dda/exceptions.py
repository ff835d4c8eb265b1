"""Exception hierarchy. The CLI maps each family to its own exit code."""


class QuantletError(Exception):
    """Base class for all package errors."""


class ConfigError(QuantletError, ValueError):
    """Invalid configuration value (grid size, thresholds, fold counts)."""


class SchemaError(QuantletError, ValueError):
    """Input tables or records with inconsistent columns or dimensions."""


class DegenerateSampleError(SchemaError):
    """A pixel sample or ROI too small to support the requested computation."""


class DegenerateLabelsError(SchemaError):
    """Binary labels with a single class present."""


class ConvergenceError(QuantletError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The last iterate is kept on ``last_iterate`` for inspection.
    """

    def __init__(self, message, last_iterate=None, diagnostics=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics or {}
