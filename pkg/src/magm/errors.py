"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-range input (dimension mismatch, invalid parameters)."""


class EvaluationError(RuntimeError):
    """An objective evaluation produced a non-finite value."""


class UnsupportedProblemError(ValueError):
    """The requested operation is not available for this problem."""


class SubproblemError(RuntimeError):
    """A simplex subproblem did not reach the requested KKT tolerance.

    Attributes
    ----------
    best_residual : float
        Smallest KKT residual reached before giving up.
    """

    def __init__(self, message, best_residual=float("nan")):
        super().__init__(message)
        self.best_residual = best_residual


class InsufficientDataError(ValueError):
    """Too few usable points for a rate fit."""


class DivergenceError(RuntimeError):
    """The ODE state became non-finite.

    Attributes
    ----------
    last_sample : object
        The last sample whose state was finite, or None.
    """

    def __init__(self, message, last_sample=None):
        super().__init__(message)
        self.last_sample = last_sample


class ConfigError(ValueError):
    """Configuration parse or validation failure."""

    def __init__(self, message, line=None, key=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key


class FormatError(ValueError):
    """A run directory file is missing, unreadable or lacks a required column."""
