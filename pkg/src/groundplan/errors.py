"""Exception hierarchy. The CLI maps these to exit codes (2/3/4)."""


class GroundPlanError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GroundPlanError):
    """Bad user input: missing files, malformed data, invalid arguments."""


class IntegrityError(InputError):
    """A graph or dataset violates a structural invariant (dangling ids, duplicates)."""


class ParseError(InputError):
    """A script line or NL step could not be parsed.

    ``column`` is the 0-based offset of the offending character when known.
    """

    def __init__(self, message: str, column: int | None = None):
        self.column = column
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)


class BackendError(GroundPlanError):
    """The LM backend failed (unreachable, malformed response, retries exhausted)."""


class InvariantError(GroundPlanError):
    """An internal consistency check failed; indicates a bug, not bad input."""
