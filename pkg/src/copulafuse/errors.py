"""Exception types shared across the package."""


class CapabilityError(NotImplementedError):
    """A (family, dimension) combination that is deliberately unsupported."""


class FormatError(ValueError):
    """Malformed binary file; carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(ValueError):
    """Inconsistent data content (bad labels, shape mismatches at use time)."""


class EstimationError(RuntimeError):
    """A single copula fit could not be carried out on the given data."""


class SelectionError(RuntimeError):
    """Every candidate family failed to fit."""


class ConfigError(ValueError):
    """Invalid scenario or settings configuration."""


class UsageError(ValueError):
    """Bad command-line usage or malformed high-level inputs."""
