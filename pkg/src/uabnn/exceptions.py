class ConfigurationError(ValueError):
    """Invalid configuration values (Nyquist violations, bad sizes, unknown names)."""


class DegenerateInputError(ValueError):
    """Input that has no meaningful result, e.g. noise relative to a zero-power signal."""


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shape mismatch, label out of range)."""


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")


class EmptyOutputError(ValueError):
    """An operation would produce no output at all (e.g. a window longer than the signal)."""
