"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A call violated an operation's preconditions."""


class ConfigurationError(ValueError):
    """A layer or architecture description cannot be built."""


class FormatError(ValueError):
    """A data file does not follow the expected binary layout."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss."""
