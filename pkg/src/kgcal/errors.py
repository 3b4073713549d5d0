"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class KgcalError(Exception):
    exit_code = 1


class ConfigError(KgcalError, ValueError):
    """Invalid configuration or usage."""

    exit_code = 1


class DataError(KgcalError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(KgcalError, ArithmeticError):
    """Non-finite values or optimizer failure."""

    exit_code = 3
