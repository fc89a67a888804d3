"""Exception hierarchy shared by every module of the package."""


class SieveJoinError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(SieveJoinError, KeyError):
    """Unknown table or attribute, or a row whose arity does not match."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep messages readable.
        return str(self.args[0]) if self.args else ""


class CSVParseError(SieveJoinError, ValueError):
    def __init__(self, message: str, line: int, path: str | None = None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line}: {message}")


class ValueRangeError(SieveJoinError, OverflowError):
    """A value does not fit in a signed 64-bit integer."""


class StructureError(SieveJoinError, ValueError):
    """Join graph is disconnected or does not match its declared topology."""


class TopologyError(SieveJoinError, ValueError):
    """An operation was called with a query shape it does not handle."""


class DomainError(SieveJoinError, ValueError):
    pass


class ParameterError(SieveJoinError, ValueError):
    pass


class PreconditionError(SieveJoinError, ValueError):
    pass


class ContractError(SieveJoinError):
    """Inputs that are individually valid but do not belong together."""


class StaleSieveError(SieveJoinError):
    pass


class UnsupportedOperationError(SieveJoinError, NotImplementedError):
    pass


class CorrectnessError(SieveJoinError):
    """Engines disagree on a result; always a bug, never user error."""
