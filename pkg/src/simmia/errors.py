"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data and format
problems exit 2, numeric failures exit 3.
"""


class SimmiaError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SimmiaError):
    """A file or record violates the declared format or a dataset invariant."""


class CapacityError(SimmiaError):
    """A sampling request exceeds the available population."""


class TrainingError(SimmiaError):
    """Optimization produced a non-finite loss."""
