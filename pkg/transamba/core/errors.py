class ConfigError(ValueError):
    """Invalid or unknown configuration value."""

    exit_code = 2


class DataError(ValueError):
    """Malformed, missing or inconsistent data on disk or in memory."""

    exit_code = 3


class NumericalError(FloatingPointError):
    """Non-finite values where finite ones are required (NaN loss, bad step size)."""

    exit_code = 4


__all__ = ["ConfigError", "DataError", "NumericalError"]
