"""Exception types shared across the package."""


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated (shapes, finiteness, ranges)."""


class NumericalError(ArithmeticError):
    """Raised when a computation is numerically undefined (singular matrix, divergence)."""


class PlantInstabilityError(NumericalError):
    """Raised when a plant integrator is detected to be unstable."""


class ConfigError(ValueError):
    """Raised for invalid experiment configuration; the message carries the field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
