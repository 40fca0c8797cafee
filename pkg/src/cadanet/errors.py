"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An invalid shape, option, or config value.

    The message names the violated rule so CLI users can fix the config
    without reading source.
    """


class CheckpointError(RuntimeError):
    """A checkpoint file that cannot be read (bad magic, version, truncation)."""

    def __init__(self, message, version_mismatch=False):
        super().__init__(message)
        self.version_mismatch = version_mismatch
