"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown or out of range."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class FormatError(ValueError):
    """A file on disk does not follow its declared binary layout."""
