"""Exception types shared across the package."""


class MielabError(Exception):
    """Base class for package errors."""


class ConfigError(MielabError):
    """Invalid configuration, game definition, or CLI arguments."""


class NumericalError(MielabError):
    """A numerical routine left its domain of validity."""


class DataError(MielabError):
    """Malformed or inconsistent input data (logs, traces, files)."""
