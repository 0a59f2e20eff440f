"""Exception types. The CLI maps each onto a distinct exit code."""


class ConfigError(ValueError):
    """Malformed or unknown configuration."""


class ShapeError(ValueError):
    """Array or layout dimensions do not agree."""


class KindMismatchError(ValueError):
    """An adapter of the wrong element kind was supplied."""


class CheckpointError(IOError):
    """Corrupt or unreadable checkpoint file."""


class VerificationError(AssertionError):
    """A numerical self-check failed."""


class NonFiniteError(FloatingPointError):
    """A loss or sampler state became NaN/inf."""
