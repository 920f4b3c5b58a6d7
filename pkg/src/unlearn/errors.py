class UnlearnError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(UnlearnError, ValueError):
    pass


class SchemaError(UnlearnError, ValueError):
    pass


class FormatError(UnlearnError, ValueError):
    """Malformed binary container; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(UnlearnError, RuntimeError):
    pass


class InvariantError(UnlearnError, AssertionError):
    pass
