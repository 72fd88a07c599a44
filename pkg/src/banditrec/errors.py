"""Exception hierarchy shared by the simulator, policies and evaluators."""


class BanditRecError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BanditRecError, ValueError):
    """Invalid configuration values."""


class DomainError(BanditRecError, ValueError):
    """An argument lies outside the domain of the operation."""


class SupportError(BanditRecError, ValueError):
    """A logging policy assigns zero probability to some action."""


class FitError(BanditRecError):
    """A model cannot be fitted on the given data."""


class EstimationError(BanditRecError, ValueError):
    """Logged data cannot be used for off-policy estimation."""


class DataFormatError(BanditRecError):
    """A serialized dataset or model is malformed.

    ``lineno`` is the 1-based line of the offending record when known.
    """

    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where = f"{path}:{lineno}: " if lineno is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.lineno = lineno
