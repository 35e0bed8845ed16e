"""Exception types shared across the toolkit.

Plain argument and range violations raise the builtin ValueError; the
classes here mark failures that callers routinely need to tell apart
(bad files, failed transcription backends, numeric blow-ups).
"""


class GazemarkError(Exception):
    """Base class for all toolkit-specific errors."""


class ParseError(GazemarkError):
    """A file or byte stream does not match its expected format."""


class StructuralError(GazemarkError):
    """Composite input violates a structural rule (duplicate ids, mismatched lengths)."""


class BackendError(GazemarkError):
    """A transcription backend failed; the message carries its diagnostics."""


class NumericError(GazemarkError):
    """A numeric operation left the representable range (overflow, bad exponent)."""


class MetricError(GazemarkError):
    """A requested metric is undefined for the given data (e.g. empty matrix)."""
