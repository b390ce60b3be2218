"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ContractError):
    """Input would make the operation undefined (e.g. a zero-norm row)."""


class ConfigError(ValueError):
    """Invalid experiment, loss, or sampler configuration."""


class NumericAbort(RuntimeError):
    """A non-finite value appeared during training."""
