"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Input with the wrong dimensions was passed to a numeric routine."""


class NumericOverflowError(FloatingPointError):
    """A non-finite value showed up where only finite values are allowed."""


class ProtocolError(RuntimeError):
    """An object was used out of order, e.g. stepping a finished episode."""


class NotAvailableError(LookupError):
    pass


class CheckpointError(ValueError):
    pass


class ConfigError(ValueError):
    pass
