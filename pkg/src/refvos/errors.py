"""Exception hierarchy shared across the package.

The CLI maps each category to a distinct exit code, so keep new errors
under one of these bases.
"""


class RefvosError(Exception):
    """Base class for all package errors."""


class ConfigError(RefvosError):
    """Unknown key, malformed value, or out-of-range configuration."""


class MissingInputError(RefvosError):
    """A required file or directory does not exist."""


class ShapeMismatchError(RefvosError):
    """Tensor/checkpoint shapes disagree with the active configuration."""


class DataError(RefvosError):
    """Dataset generation or serialization failure."""


class PlacementError(DataError):
    """Objects could not be placed without violating occlusion limits."""


class NegativePairingError(DataError):
    """No unrelated video exists for an expression."""


class ArchiveError(DataError):
    """Corrupt or truncated archive file.

    Carries the offending path and, when known, the byte offset where
    parsing failed.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        loc = ""
        if path is not None:
            loc = f" [{path}"
            if offset is not None:
                loc += f" @ byte {offset}"
            loc += "]"
        super().__init__(message + loc)
