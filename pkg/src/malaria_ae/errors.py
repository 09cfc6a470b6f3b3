"""Exception hierarchy.

Invalid arguments to numerical kernels raise plain ``ValueError``. The
subclasses below let callers (and the CLI exit-code mapping) tell
configuration, data, numeric and checkpoint failures apart.
"""


class ConfigError(ValueError):
    """A configuration value violates a documented invariant."""


class DataError(ValueError):
    """Dataset content is missing, insufficient or undecodable."""


class DecodeError(DataError):
    def __init__(self, path, reason):
        super().__init__(f"cannot decode image {path}: {reason}")
        self.path = path


class NumericError(FloatingPointError):
    """A non-finite value appeared where training requires finite numbers."""


class CheckpointError(ValueError):
    """Base class for binary container load failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass
