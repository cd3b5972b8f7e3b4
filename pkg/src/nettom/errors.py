"""Exception types shared across the toolkit."""


class ConfigError(ValueError):
    """Bad configuration: unknown ids, malformed config files, invalid flags."""


class DataError(RuntimeError):
    """Malformed or inconsistent data encountered at runtime."""


class SampleExclusionError(ValueError):
    """A dataset sample cannot be built and must be excluded (not fatal)."""
