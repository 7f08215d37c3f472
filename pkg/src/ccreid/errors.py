"""Exception types. Each carries the process exit code the CLI maps it to."""

from __future__ import annotations


class ReIDError(Exception):
    exit_code = 1


class ConfigError(ReIDError, ValueError):
    exit_code = 2


class ReIDIOError(ReIDError, OSError):
    exit_code = 3


class DataError(ReIDError, ValueError):
    exit_code = 4


class BatchCompositionError(ReIDError, ValueError):
    exit_code = 5


class ProtocolError(ReIDError, ValueError):
    exit_code = 6


class NumericError(ReIDError, ArithmeticError):
    exit_code = 7


class StateError(ReIDError, RuntimeError):
    exit_code = 8


class ShapeError(ReIDError, ValueError):
    exit_code = 9


# Not an exception: returned by `ablate` when at least one preset row failed.
ABLATION_ROW_FAILED = 10
