"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: bad parameter range, unknown key, malformed input."""


class NumericalError(RuntimeError):
    """Numerical failure at run time: factorization, conditioning, empty estimate."""
