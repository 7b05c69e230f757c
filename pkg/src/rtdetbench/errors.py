"""Exception hierarchy shared by the loaders, metrics and CLI."""

from __future__ import annotations


class RtdetbenchError(Exception):
    """Base class for every error raised by this package."""


class InputError(RtdetbenchError, ValueError):
    """Bad input data. The CLI maps these to exit code 2."""


class MalformedFile(InputError):
    pass


class SchemaViolation(InputError):
    pass


class UnknownClass(InputError):
    pass


class UnknownImage(InputError):
    pass


class InvalidGeometry(InputError):
    pass


class ScoreOutOfRange(InputError):
    pass


class NonPositiveLatency(InputError):
    pass


class EmptyLog(InputError):
    pass


class InvalidConfig(InputError):
    pass


class InvalidInput(InputError):
    pass


class ShapeMismatch(RtdetbenchError, ValueError):
    pass
