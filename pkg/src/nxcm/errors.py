"""Exception types shared across the codec."""


class NxcmError(Exception):
    """Base class for all codec errors."""


class ConfigError(NxcmError, ValueError):
    """Invalid configuration or contract violation caught at construction time."""


class ShapeError(NxcmError, ValueError):
    """Tensor shape violates an operation's precondition."""


class BitstreamError(NxcmError, ValueError):
    """Malformed, truncated, or inconsistent bitstream."""


class TrainingDiverged(NxcmError, RuntimeError):
    """Non-finite loss encountered; carries the path of a diagnostic snapshot."""

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
