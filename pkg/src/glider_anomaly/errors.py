"""Exception hierarchy shared across the package."""


class GliderAnomalyError(Exception):
    """Base class for every error raised deliberately by this package."""


class DomainError(GliderAnomalyError, ValueError):
    """Numeric input outside the domain of a function (NaN, inf, bad latitude)."""


class ConfigurationError(GliderAnomalyError, ValueError):
    """Inconsistent or invalid configuration values."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class SimulationError(GliderAnomalyError, RuntimeError):
    pass


class DivergenceError(GliderAnomalyError, RuntimeError):
    """The estimator state became non-finite or the tracking error blew up."""


class InputError(GliderAnomalyError, ValueError):
    """Record streams that violate ordering or coverage contracts."""


class FormatError(GliderAnomalyError, ValueError):
    """A record/series/config file could not be parsed.

    ``line`` is the 1-based line number of the offending line, when known.
    """

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class OrderingError(FormatError):
    """Time column is not strictly increasing."""
