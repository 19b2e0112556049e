class DomainError(ValueError):
    """Argument outside the domain of the operation."""


class DivergenceError(ArithmeticError):
    """A sum or integral that was asked for does not converge."""


class ToleranceError(RuntimeError):
    """Requested accuracy could not be reached within the configured limits.

    ``best_bound`` carries the smallest error bound that was achieved.
    """

    def __init__(self, message, best_bound=None):
        super().__init__(message)
        self.best_bound = best_bound


class ConfigError(ValueError):
    """Invalid experiment plan or run configuration.

    ``field`` is the dotted path of the offending entry.
    """

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
