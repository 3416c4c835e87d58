"""Exceptions shared across modules, mapped to CLI exit codes.

ConfigError covers invalid or incompatible configuration (exit code 2),
DataError covers violated data contracts in inputs (exit code 3).
"""


class ConfigError(ValueError):
    """Invalid configuration or incompatible inputs."""


class DataError(ValueError):
    """An input file or data structure violates its contract."""


class UndefinedMetricError(DataError):
    """A metric is undefined for the given input (e.g. no ground truth)."""
