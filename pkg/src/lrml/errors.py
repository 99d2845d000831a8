"""Exception types shared across the package."""


class LRMLError(Exception):
    """Base class for all errors raised by this package."""


class DataError(LRMLError, ValueError):
    """Malformed input data or a dataset that violates a precondition."""


class ConfigError(LRMLError, ValueError):
    """Invalid hyperparameters or run configuration."""


class SnapshotError(LRMLError, ValueError):
    """Unreadable, corrupt or incompatible snapshot file."""


class NonFiniteGradientError(LRMLError, FloatingPointError):
    """A gradient block contains NaN or infinity."""

    def __init__(self, block):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block
