class ConfigurationError(ValueError):
    """Raised for malformed inputs: wrong dimensions, invalid parameters, bad scenarios."""


class NumericalError(ArithmeticError):
    """Raised when a computed quantity is not finite."""
