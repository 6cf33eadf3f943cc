"""Exception hierarchy with CLI exit-code categories."""


class FusionError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FusionError):
    """Invalid configuration value or violated config invariant."""

    exit_code = 2


class DatasetError(FusionError):
    """Missing, corrupt, or inconsistent dataset files."""

    exit_code = 3


class CapacityError(FusionError):
    """A fixed-capacity structure (bucket chain, heap) is exhausted."""

    exit_code = 4


class NotFoundError(FusionError):
    """Lookup of a key that is not present."""

    exit_code = 5


class FormatError(FusionError):
    """Unreadable or version-incompatible file format."""

    exit_code = 6
