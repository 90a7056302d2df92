"""Exception types shared across the package."""


class CatalystError(Exception):
    """Base class for all package-specific errors."""


class FormatError(CatalystError):
    """A dump file is malformed: bad magic, truncated payload, or header mismatch."""


class ValidationError(CatalystError):
    """In-memory data violates a contract (NaN, negative activation, shape mismatch)."""


class ConfigError(CatalystError):
    """A run configuration is inconsistent (incompatible fusion/baseline, bad grid)."""


class DegenerateDataError(CatalystError):
    """Data degenerated past a contract boundary (zero entropy sum, non-positive threshold)."""
