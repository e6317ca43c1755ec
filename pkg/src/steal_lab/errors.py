"""Exception hierarchy shared across the package."""


class StealLabError(Exception):
    """Base class for all errors raised by steal_lab."""


class ShapeError(StealLabError, ValueError):
    """Operands have incompatible or invalid dimensions."""


class DomainError(StealLabError, ValueError):
    """A value is outside its mathematically valid domain (e.g. label >= k)."""


class DataFormatError(StealLabError, ValueError):
    """A file (CSV, checkpoint, config) could not be parsed.

    ``line`` is the 1-based offending line number when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(StealLabError, ValueError):
    """Invalid experiment configuration or oracle/task mismatch."""


class ProtocolError(StealLabError, RuntimeError):
    """The oracle query contract was violated (bad dims, oversized batch, bad request)."""


class TransportError(StealLabError, RuntimeError):
    """A remote oracle could not be reached after retries."""


class TrainingDivergedError(StealLabError, RuntimeError):
    """Training produced a non-finite loss.  ``epoch`` names the failing epoch."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch
