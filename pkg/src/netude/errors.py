"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(ValueError):
    """A NaN or infinity showed up where finite values are required."""


class DivergenceError(RuntimeError):
    """A simulation or training run blew up.

    ``step`` is the integration step (or epoch) at which it was detected and
    ``where`` a short label for the failing stage or system.
    """

    def __init__(self, message: str, step: int | None = None, where: str | None = None):
        super().__init__(message)
        self.step = step
        self.where = where


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` is the dotted path of the bad entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
