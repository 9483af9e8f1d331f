"""Exception types shared across the toolkit."""

from sklearn.exceptions import NotFittedError


class WildsetError(Exception):
    """Base class for toolkit errors."""


class InvalidArgumentError(WildsetError, ValueError):
    pass


class DegenerateInputError(WildsetError, ValueError):
    pass


class CorruptIndexError(WildsetError):
    """Stored data does not decode under the owning quantizer or file format."""


class DuplicateIdError(WildsetError, KeyError):
    pass


# Re-exported so callers can catch the untrained-model case without importing sklearn.
InvalidStateError = NotFittedError

__all__ = [
    "WildsetError",
    "InvalidArgumentError",
    "DegenerateInputError",
    "CorruptIndexError",
    "DuplicateIdError",
    "InvalidStateError",
]
