"""Exception types shared across the package."""


class EvaluationError(ArithmeticError):
    """A single stochastic evaluation failed (recoverable by redrawing)."""


class SingularFactorError(EvaluationError):
    """Triangular factor has a nonpositive or non-finite diagonal."""


class NonFiniteParameterError(EvaluationError):
    """Parameter or intermediate value is NaN or infinite."""


class ConfigError(ValueError):
    """Bad run configuration (CLI exit code 2)."""


class DataError(ValueError):
    """Bad or unusable input data (CLI exit code 3)."""


class FitDivergedError(RuntimeError):
    """Too many consecutive rejected steps (CLI exit code 4).

    Carries the partial fit report accumulated before divergence.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
