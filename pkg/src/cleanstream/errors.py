"""Exception types shared across the package."""


class CleanstreamError(Exception):
    """Base class for all package errors."""


class ConfigError(CleanstreamError, ValueError):
    """Invalid configuration value or combination."""


class FormatError(CleanstreamError):
    """Base class for file/container format errors."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class MalformedHeaderError(FormatError):
    """Header fields are inconsistent or unparseable."""


class TruncatedDataError(FormatError):
    """File ends before the declared payload is complete."""


class UnsupportedCodecError(FormatError):
    """Valid file, but an encoding this package does not handle."""


class ContainerMismatchError(FormatError):
    """Container was written with an incompatible configuration."""
