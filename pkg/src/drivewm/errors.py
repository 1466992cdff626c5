"""Exception types raised across the package.

Every error derives from :class:`DriveWMError` so callers (and the CLI) can
catch the whole family at once.  Input-file problems derive from
:class:`InputError`; violated metric or sampler preconditions from
:class:`PreconditionError`.
"""

from __future__ import annotations


class DriveWMError(ValueError):
    """Base class for all package errors."""


class InputError(DriveWMError):
    """Malformed or inconsistent input data (files, records)."""


class PreconditionError(DriveWMError):
    """An operation was called outside its documented domain."""


# trajectories

class InvalidPose(PreconditionError):
    pass


class DegenerateTrajectory(PreconditionError):
    pass


class IndexOutOfRange(PreconditionError, IndexError):
    pass


class InvalidRate(PreconditionError):
    pass


# metrics

class LengthMismatch(PreconditionError):
    pass


class EmptyPath(PreconditionError):
    pass


class SetTooSmall(PreconditionError):
    def __init__(self, size: int, k: int, label: str | None = None):
        self.size = size
        self.k = k
        self.label = label
        where = f" ({label})" if label else ""
        super().__init__(
            f"set{where} has {size} element(s); k={k} needs at least {k + 1}"
        )


# quantizer / samplers / losses

class DimensionMismatch(PreconditionError):
    pass


class ShapeMismatch(PreconditionError):
    pass


class ZeroVector(PreconditionError):
    pass


class MaskedTokenPresent(PreconditionError):
    pass


class TauOutOfRange(PreconditionError):
    pass


class PredictorShapeMismatch(PreconditionError):
    pass


class StateExhausted(PreconditionError):
    pass


class ContextUnderfilled(PreconditionError):
    pass


class NoMaskedPositions(PreconditionError):
    pass


# harness / synth

class InvalidSpec(PreconditionError):
    pass


class HorizonExceeded(PreconditionError):
    pass


class InvalidPreset(PreconditionError):
    pass


# files

class ParseError(InputError):
    def __init__(self, file: str, line: int | None, reason: str):
        self.file = str(file)
        self.line = line
        self.reason = reason
        loc = self.file if line is None else f"{self.file}:{line}"
        super().__init__(f"{loc}: {reason}")


class InconsistentRate(InputError):
    pass
