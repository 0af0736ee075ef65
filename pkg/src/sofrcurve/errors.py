"""Exception hierarchy shared by the library and the CLI."""


class CurveError(Exception):
    """Base class; ``kind`` is emitted in the CLI's JSON error report."""

    kind = "error"


class DomainError(CurveError, ValueError):
    kind = "domain"


class UnsupportedVariantError(CurveError, ValueError):
    kind = "unsupported_variant"


class DataError(CurveError, ValueError):
    kind = "data"

    def __init__(self, message: str, *, missing=None, line: int | None = None):
        super().__init__(message)
        self.missing = list(missing) if missing is not None else []
        self.line = line


class NumericalError(CurveError, ArithmeticError):
    kind = "numerical"


class ConsistencyError(CurveError, AssertionError):
    """An internal identity check failed (e.g. closed form vs direct route)."""

    kind = "consistency"
