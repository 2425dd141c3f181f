"""Exception types shared across the package.

The CLI maps these onto exit codes: SchemaError -> 1, ConfigError -> 2,
NumericError / EstimationError -> 3.
"""


class SchemaError(Exception):
    """Input file is missing, malformed, or violates a documented CSV schema."""


class ConfigError(ValueError):
    """A configuration value is invalid; the message names the offending field."""


class NumericError(RuntimeError):
    """A numeric routine failed (eigensolver breakdown, rank deficiency, ...)."""


class EstimationError(NumericError):
    """Estimation is impossible for the given inputs (e.g. all components dropped)."""


class DataInconsistencyError(ValueError):
    """Observed margins are inconsistent with the known-component matrices."""
