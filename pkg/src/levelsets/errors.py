"""Error taxonomy mirrored by the CLI exit codes (2 / 3 / 4)."""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Missing or malformed input data."""


class NumericalError(Exception):
    """A numerical procedure failed beyond recovery."""
