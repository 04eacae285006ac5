"""Exception hierarchy shared by all modules.

Exit-code mapping (see cli): usage errors -> 1, data errors -> 2,
everything else raised from here -> 3.
"""


class KanfedError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(KanfedError):
    """Invalid shapes, model configs or experiment settings."""


class DataError(KanfedError):
    """Malformed input data (IDX files, labels out of range, bad logs)."""


class InternalError(KanfedError):
    """Contract violation inside the package (should not happen in normal use)."""


class InsufficientDataError(KanfedError):
    """A statistic was requested on too few samples."""


class ReportError(KanfedError):
    """Report generation failed (missing model group, empty log dir)."""
