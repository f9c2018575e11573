"""Exception hierarchy shared across the engine.

Exit-code mapping used by the CLI: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ExpovarError(Exception):
    """Base class for all engine errors."""


class ConfigError(ExpovarError):
    """Invalid or inconsistent run configuration."""


class DataError(ExpovarError):
    """Malformed or incomplete input data (inventory, scores, databases)."""


class NumericError(ExpovarError):
    """Numerical failure (e.g. covariance factorization beyond max jitter)."""
