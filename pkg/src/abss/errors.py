"""Exception hierarchy for the abss engine.

Every malformed input maps to one of these named errors; internal code never
lets a bad input surface as a bare KeyError/ValueError from deep inside numpy.
"""

from __future__ import annotations


class AbssError(Exception):
    """Base class for all engine errors."""


class TensorFormatError(AbssError):
    """Byte stream is not a valid ATTN v1 tensor (magic, version, or dtype)."""


class TensorTruncationError(AbssError):
    """Stream ended before the declared payload; carries expected/actual counts."""

    def __init__(self, message: str, expected: int, actual: int):
        super().__init__(f"{message} (expected {expected} bytes, got {actual})")
        self.expected = expected
        self.actual = actual


class TensorValidationError(AbssError):
    """Tensor payload violates an invariant (NaN/Inf/negative element, bad shape)."""


class ManifestSchemaError(AbssError):
    """Manifest JSON is missing a field or holds a value of the wrong kind."""


class ManifestConsistencyError(AbssError):
    """Manifest metadata disagrees with the tensor file it points at."""


class ShapeError(AbssError):
    """Array shape incompatible with the requested operation."""


class UsageError(AbssError):
    """Caller violated an operation precondition (empty set, bad K, mixed pools...)."""


class TokenIndexError(UsageError):
    """A token index falls outside the annotated token range."""


class DegenerateSampleError(UsageError):
    """Paired samples have zero-variance differences; the t statistic is undefined."""
