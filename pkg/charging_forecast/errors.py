"""
Error types shared across the forecasting package.

Every error carries the exit code the command-line runner should use when the
error reaches the top level: 1 for usage problems (bad configuration, bad
parameters, contract violations), 2 for data problems and 3 for numeric
failures during training.
"""

from __future__ import annotations


class ForecastError(Exception):
    """Base class for all errors raised by the package."""

    exit_code: int = 1


class DimensionError(ForecastError, ValueError):
    """Operand shapes do not agree."""


class ParameterError(ForecastError, ValueError):
    """A numeric argument is outside its valid range."""


class ConfigurationError(ForecastError, ValueError):
    """A configuration value is invalid or infeasible for the data."""


class ContractError(ForecastError, RuntimeError):
    """An operation was called in a state it does not support."""


class DataError(ForecastError):
    """Input files are missing, malformed or produce an empty series."""

    exit_code = 2


class IngestionError(DataError):
    """Too many event rows were rejected during ingestion."""


class NumericError(ForecastError):
    """Training produced a non-finite loss."""

    exit_code = 3
