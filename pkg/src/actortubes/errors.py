"""Exception classes shared across the package."""


class ValidationError(ValueError):
    """An input value or document violates a documented invariant."""


class FormatError(ValidationError):
    """A file could not be parsed as one of the supported formats."""


class TrackingError(RuntimeError):
    """The tracker cannot produce a box for the requested frame."""
