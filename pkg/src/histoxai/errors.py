"""Exception hierarchy shared by every module.

CLI exit codes hang off ``exit_code``: 2 data, 3 numeric, 4 artifact mismatch.
"""


class HistoError(Exception):
    exit_code = 1


class DimensionError(HistoError, ValueError):
    """Operand shapes are not conformable."""


class ParameterError(HistoError, ValueError):
    """A scalar parameter is out of its allowed range."""


class ContractError(HistoError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class ConfigError(HistoError, ValueError):
    exit_code = 2


class DataError(HistoError, ValueError):
    exit_code = 2


class NumericError(HistoError, FloatingPointError):
    exit_code = 3


class FormatError(HistoError, ValueError):
    """Artifact on disk does not match what the model expects."""

    exit_code = 4
