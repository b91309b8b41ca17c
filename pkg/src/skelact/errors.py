"""Exception types shared across the package."""


class SkelactError(Exception):
    pass


class ShapeError(SkelactError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(SkelactError):
    """Invalid configuration value or unknown configuration key."""


class ContractError(SkelactError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class DataError(SkelactError):
    """Invalid dataset, topology, or sequence content."""


class ParseError(DataError):
    """Malformed skeleton file; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(SkelactError):
    """Unreadable checkpoint or checkpoint/model shape drift."""


class DivergenceError(SkelactError):
    """Training produced a non-finite value; names the first bad tensor."""
