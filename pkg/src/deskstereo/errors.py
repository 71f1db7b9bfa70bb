"""Exception hierarchy shared by every module."""


class StereoError(Exception):
    """Base class for errors raised by this package."""


class ContractError(StereoError, ValueError):
    """A precondition of an operation was violated."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible; the message names the offending axis."""


class DataError(StereoError, ValueError):
    """Input data is unusable (non-finite values, empty masks, empty datasets)."""


class FormatError(DataError):
    """A file could not be parsed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ConfigError(StereoError, ValueError):
    """Bad configuration key or value, or checkpoint/config mismatch."""


class TrainingError(StereoError, RuntimeError):
    """Training cannot continue (non-finite loss or gradients)."""
