"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(ValueError):
    """A configuration document or override is malformed or inconsistent."""


class FormatError(ValueError):
    """A binary file is not a valid instance of its declared format.

    ``offset`` is the byte position where validation failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
