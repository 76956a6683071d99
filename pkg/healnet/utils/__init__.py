# Initialization file for the utils module

from .errors import (
    HealNetError,
    ConfigError,
    UsageError,
    DimensionError,
    ContractError,
    DataError,
    ParseError,
    FormatError,
    JoinError,
    DiscretizationError,
    NumericalError,
    UndefinedCIndexError,
    NaNGradientError,
)
from .rng import stream, derive_seed
from .serializer import format_float, serialize_fold, serialize_cross_validation

__all__ = [
    'HealNetError',
    'ConfigError',
    'UsageError',
    'DimensionError',
    'ContractError',
    'DataError',
    'ParseError',
    'FormatError',
    'JoinError',
    'DiscretizationError',
    'NumericalError',
    'UndefinedCIndexError',
    'NaNGradientError',
    'stream',
    'derive_seed',
    'format_float',
    'serialize_fold',
    'serialize_cross_validation',
]
