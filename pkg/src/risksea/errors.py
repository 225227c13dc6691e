class RiskSeaError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(RiskSeaError, ValueError):
    """Invalid or incomplete configuration."""


class DataError(RiskSeaError):
    """Missing or malformed input data (edge logs, stores, models)."""
