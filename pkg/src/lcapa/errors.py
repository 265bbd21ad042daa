"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration.

    ``key`` carries the dotted path of the offending configuration entry when
    the error originates from a parsed config file.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DivergenceError(RuntimeError):
    """An adaptive filter produced non-finite weights or errors."""

    def __init__(self, iteration, message="non-finite value in estimator"):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")


class AnalysisError(ArithmeticError):
    """A steady-state expression could not be evaluated (singular system)."""


class StabilityError(AnalysisError):
    """Step size outside the admissible interval of the steady-state model."""

    def __init__(self, message, interval=None):
        self.interval = interval
        super().__init__(message)
