"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: usage/config -> 1, data -> 2,
numeric -> 3.
"""


class ConfigError(ValueError):
    """Invalid option wiring: bad shapes, unknown flags, kernel > input."""


class DataError(ValueError):
    """Malformed input data (tracks, scenes, CSV rows)."""


class SchemaError(DataError):
    """Input file is missing a required column or field."""


class NumericError(RuntimeError):
    """Non-finite values or singular matrices encountered mid-computation."""


class TrainError(NumericError):
    """Training diverged; message identifies the epoch and scene."""
