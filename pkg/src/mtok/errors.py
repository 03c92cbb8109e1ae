"""Exception hierarchy shared across the package."""


class MtokError(Exception):
    """Base class for package errors."""


class LoadError(MtokError):
    """A file or directory could not be read; message names the path."""


class SchemaError(MtokError):
    """Structurally invalid data (dimension mismatch, bad layout, bad payload)."""


class ConfigError(MtokError):
    """Invalid configuration value or combination."""


class LengthError(MtokError):
    """A sequence length is outside the operation's supported range."""


class NumericError(MtokError):
    """Non-finite values where finite ones are required."""


class CheckpointError(MtokError):
    """Corrupt, tampered, or mismatched checkpoint container."""
