"""Exception hierarchy shared by every module."""

from __future__ import annotations


class ContVocError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ContVocError, ValueError):
    """Input failed a contract check (CLI exit code 1)."""


class FormatError(ValidationError):
    """A file does not follow its declared binary layout."""


class UnsupportedError(ValidationError):
    """A well-formed file uses an encoding this toolkit does not handle."""


class IoError(ContVocError, OSError):
    """Reading or writing a path failed (CLI exit code 2)."""


class GridMismatchError(ValidationError):
    """Two tracks or signals do not share one frame grid."""


class InsufficientDataError(ValidationError):
    pass


class EmptyTrackError(ValidationError):
    pass


class EmptyMaskError(ValidationError):
    pass


class InvalidF0Error(ValidationError):
    pass


class SilentFrameError(ValidationError):
    pass


class UnstableFrameError(ValidationError):
    """MGC polynomial is not minimum phase, so no ordered LSP set exists."""


class InvalidLspError(ValidationError):
    """LSP frequencies are not strictly increasing inside (0, pi)."""


class SpecError(ValidationError):
    """Network layer shapes do not chain."""


class ShapeError(ValidationError):
    pass


class NumericalError(ContVocError, ArithmeticError):
    pass


class ConfigError(ValidationError):
    pass
