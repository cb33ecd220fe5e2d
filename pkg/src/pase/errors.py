"""Exception types shared across the package."""


class PaseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PaseError, ValueError):
    """Invalid parameters or an impossible configuration."""


class InputError(PaseError, ValueError):
    """Data passed to an operation has the wrong shape or content."""


class FormatError(PaseError, ValueError):
    """A file on disk could not be parsed."""


class UsageError(PaseError, ValueError):
    """Unknown option or verb at an API or CLI boundary."""


class StageError(PaseError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
