"""Exception types shared across the package."""


class UsageError(ValueError):
    """Invalid arguments: wrong shapes, out-of-range values, bad scale factors."""


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""
