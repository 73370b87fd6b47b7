class MarkovCPError(Exception):
    """Base class for errors raised by markovcp."""


class InvalidInputError(MarkovCPError, ValueError):
    """Input violates a documented precondition."""


class UnvisitedStateError(InvalidInputError):
    """A transition-matrix row with no observations was needed."""

    def __init__(self, state, message=None):
        self.state = state
        super().__init__(message or f"state {state} has no observed outgoing transitions")


class ResourceCapError(MarkovCPError):
    """A computation would exceed a configured resource cap."""


class ParseError(InvalidInputError):
    """Malformed input file; carries the location of the problem."""

    def __init__(self, path, line, column, message):
        self.path = str(path)
        self.line = line
        self.column = column
        loc = f"{self.path}:{line}" + (f": column {column!r}" if column else "")
        super().__init__(f"{loc}: {message}")
