"""Exception hierarchy shared by the library and the command line.

The command line maps each family onto a process exit code:
``ConfigError`` -> 1, ``DataError`` -> 2, ``NumericError`` -> 3.
"""

from __future__ import annotations

from typing import ClassVar


class MmclError(Exception):
    """Base class for all errors raised by mmcl."""

    exit_code: ClassVar[int] = 1


class ConfigError(MmclError):
    """An invalid or inconsistent configuration."""

    exit_code: ClassVar[int] = 1


class CheckpointError(ConfigError):
    """A checkpoint that cannot be used with the requested config or data."""


class DataError(MmclError):
    """A problem with input data files or their contents."""

    exit_code: ClassVar[int] = 2


class MmfError(DataError):
    """A malformed MMF matrix file."""

    code: ClassVar[str] = "mmf"


class BadMagicError(MmfError):
    code: ClassVar[str] = "bad_magic"


class TruncatedFileError(MmfError):
    code: ClassVar[str] = "truncated"


class DimensionOverflowError(MmfError):
    code: ClassVar[str] = "dimension_overflow"


class UnknownDtypeError(MmfError):
    code: ClassVar[str] = "bad_dtype"


class DatasetValidationError(DataError):
    """One or more samples failed validation against the manifest."""

    def __init__(self, failures: list[tuple[str, str]]) -> None:
        self.failures = failures
        lines = "\n".join(f"  {sample_id}: {reason}" for sample_id, reason in failures)
        super().__init__(f"{len(failures)} sample(s) failed validation:\n{lines}")


class NumericError(MmclError, ArithmeticError):
    """A non-finite loss, gradient or function value."""

    exit_code: ClassVar[int] = 3


class ShapeError(MmclError, ValueError):
    """Operands of a primitive have non-conformable shapes."""

    def __init__(self, op: str, *shapes: tuple[int, ...]) -> None:
        self.op = op
        self.shapes = shapes
        dims = ", ".join(str(s) for s in shapes)
        super().__init__(f"{op}: non-conformable shapes {dims}")
