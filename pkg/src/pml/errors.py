"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4. Shape and state errors indicate
contract violations and are left unmapped.
"""

from __future__ import annotations


class PmlError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PmlError):
    """Invalid configuration value, flag, or hyperparameter."""


class DataError(PmlError):
    """Malformed or out-of-range dataset content."""


class NumericError(PmlError):
    """Non-finite values or numerically invalid intermediate results."""


class ShapeError(PmlError):
    """Array dimensions incompatible with the operation."""


class StateError(PmlError):
    """Operation called in the wrong order (e.g. backward before forward)."""
