"""Exception hierarchy shared by all vidrep modules.

The CLI maps these onto process exit codes: parameter/usage problems exit 2,
data and file-format problems exit 3, numeric failures exit 4.
"""


class VidrepError(Exception):
    """Base class for all vidrep errors."""


class FormatError(VidrepError):
    """A file does not follow one of the vidrep binary/CSV layouts."""


class CorruptionError(VidrepError):
    """A structurally valid file carries an inconsistent payload."""


class DataError(VidrepError):
    """Input values violate a data precondition (non-finite, negative, ...)."""


class ShapeError(VidrepError):
    """Array dimensions do not match what an operation requires."""


class ParameterError(VidrepError):
    """A configuration knob is outside its allowed range."""


class InsufficientDataError(VidrepError):
    """Not enough samples (or classes, or positives) to run an operation."""


class EmptyInputError(VidrepError):
    """An operation that needs at least one item received none."""


class DegenerateDataError(VidrepError):
    """Numerically degenerate input (zero variance, zero mean distance, ...)."""
