"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised for malformed or inconsistent input data (files, formats,
    dimension mismatches). The CLI maps this to exit code 3."""
