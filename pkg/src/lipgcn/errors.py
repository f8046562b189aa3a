"""Exception hierarchy shared by the library and the CLI.

Every error carries an ``exit_code`` so the CLI can map failure classes to
distinct process exit codes (2 = configuration, 3 = data, 4 = numeric,
1 = anything else).
"""


class LipgcnError(Exception):
    exit_code = 1


class DimensionError(LipgcnError):
    """Operand shapes are incompatible for the requested operation."""


class UsageError(LipgcnError):
    """An API contract was violated (e.g. backward on a non-scalar)."""


class ConfigError(LipgcnError):
    """Invalid configuration value or combination."""

    exit_code = 2


class DataError(LipgcnError):
    """Malformed or out-of-contract input data."""

    exit_code = 3


class GraphConstructionError(DataError):
    """A landmark graph could not be built from the given inputs."""


class CheckpointError(DataError):
    """Checkpoint file does not match the requested architecture."""


class NumericError(LipgcnError):
    """Non-finite values or a failed numeric verification."""

    exit_code = 4
