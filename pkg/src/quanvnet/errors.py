"""Exception types shared across the package."""


class QuanvNetError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(QuanvNetError):
    """Invalid configuration value or inconsistent run setup."""


class CacheError(QuanvNetError):
    """Feature cache or checkpoint file is malformed, truncated, or stale."""


class ManifestError(QuanvNetError):
    """Dataset manifest violates its format or class constraints."""


class IngestError(QuanvNetError):
    """An input image could not be read or decoded."""
