class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


class NumericalError(ArithmeticError):
    """Non-finite values or solver divergence (CLI exit code 3)."""
