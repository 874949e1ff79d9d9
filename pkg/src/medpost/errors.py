"""Exception types, grouped by how the CLI reports them.

ConfigError -> exit 2, DataError -> exit 3, NumericError -> exit 4.
"""


class MedpostError(Exception):
    """Base class for all package errors."""


class ConfigError(MedpostError, ValueError):
    """Invalid configuration: bad option values, inconsistent settings."""


class DataError(MedpostError, ValueError):
    """Invalid data: missing files/columns, malformed cells, shape mismatches."""


class NumericError(MedpostError, RuntimeError):
    """Numerical failure: non-PD matrices, exploding chains, degenerate inputs."""
