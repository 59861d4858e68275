"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid shapes."""


class InvariantError(ValueError):
    """A value violates a documented invariant (e.g. negative std)."""


class ContractError(ValueError):
    """An operation was called outside its contract (bad argument, bad state)."""


class NumericError(ArithmeticError):
    """A numeric failure (NaN/Inf) was detected; message names the operation."""


class ConfigError(ValueError):
    """An experiment or model configuration is invalid."""


class DataError(ValueError):
    """Stored data cannot satisfy a request (e.g. no episode long enough)."""
