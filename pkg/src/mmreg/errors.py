"""Error taxonomy shared across the engine.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and its
subclasses) -> 2, NumericError -> 3.
"""


class MmregError(Exception):
    """Base class for all engine errors."""


class ConfigError(MmregError):
    """Invalid configuration: bad rates, unknown keys, impossible settings."""


class DataError(MmregError):
    """Invalid data: bad files, shape/dim mismatches at the data boundary,
    labels out of range, missing responses."""


class ParseError(DataError):
    """A file failed structural validation (magic, version, truncation)."""


class ShapeError(DataError):
    """Two arrays disagree on shape; the message names both shapes."""


class NumericError(MmregError):
    """Training produced non-finite values (divergence)."""
