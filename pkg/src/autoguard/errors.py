"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its contract; the message names the field."""


class UsageError(RuntimeError):
    """An operation was called outside its precondition (e.g. step after done)."""


class SamplingError(ValueError):
    """A replay-buffer sample was requested from an underfull buffer."""


class IntegrityError(ValueError):
    """Run artifacts disagree with each other (length mismatch, hash mismatch)."""


class UnrecoverableHealingError(RuntimeError):
    """A rollback failed after a failed verification; the run must abort loudly."""
