"""Exception types shared across the pipeline."""


class DataError(Exception):
    """Malformed, missing or misaligned input data."""


class NumericError(Exception):
    """Non-finite value produced where a finite one is required."""
