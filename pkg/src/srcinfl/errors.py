"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: validation errors -> 1, data/format
errors -> 2, anything else -> 3.
"""


class SrcInflError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfigError(SrcInflError):
    """A configuration or argument violates its documented invariants."""


class TooLargeError(SrcInflError):
    """An exact-enumeration request exceeds the configured cap."""


class FormatError(SrcInflError):
    """A byte stream is not a valid prediction log (bad magic/version)."""


class TruncationError(FormatError):
    """A prediction log ends before its declared payload."""


class DataError(SrcInflError):
    """Payload values violate invariants (non-finite floats, bad labels)."""


class IncompatibleInputsError(SrcInflError):
    """Two inputs that must agree (manifest/log, log parts) do not."""


class DuplicateRecordError(IncompatibleInputsError):
    """Merging logs whose subset indices overlap."""


class ProvenanceError(DataError):
    """Recorded input digests do not match the artifacts on disk."""


class FlaggedClassError(SrcInflError):
    """A query addressed a class whose influence estimate is invalid."""


class UndefinedCorrelationError(SrcInflError):
    """Rank correlation of a constant vector was requested."""
