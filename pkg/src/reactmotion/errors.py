"""Exception hierarchy. Each family maps to one CLI exit code."""

from __future__ import annotations


class ReactMotionError(Exception):
    exit_code = 1


class ValidationError(ReactMotionError, ValueError):
    """Bad input data or configuration."""

    exit_code = 2


class ShapeError(ValidationError):
    pass


class TopologyMismatchError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class SplitError(ValidationError):
    pass


class DivergenceError(ReactMotionError, ArithmeticError):
    """Non-finite or runaway values during training or generation.

    ``index`` is the batch index (training) or the frame index (generation)
    at which divergence was detected.
    """

    exit_code = 3

    def __init__(self, message: str, index: int | None = None, partial=None):
        super().__init__(message)
        self.index = index
        self.partial = partial


class IOFormatError(ReactMotionError, OSError):
    exit_code = 4


class CheckpointError(IOFormatError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class ProtocolError(IOFormatError):
    pass


class BadMagicError(ProtocolError):
    pass


class BadLengthError(ProtocolError):
    pass


class UnknownMessageTypeError(ProtocolError):
    pass


class BadPayloadError(ProtocolError):
    pass


class ClipFormatError(IOFormatError):
    """Malformed clip or track text file."""
