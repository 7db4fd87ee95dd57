"""Shared diagnostics and exception types."""

from __future__ import annotations

from dataclasses import dataclass

LEVEL_ERROR = "error"
LEVEL_WARNING = "warning"
LEVEL_INFO = "info"


@dataclass(frozen=True)
class Diagnostic:
    """One finding from a validation pass.

    Diagnostics are data, not exceptions: validators return them so a caller
    can report every problem in one run.
    """

    level: str
    rule: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.level.upper()} {self.rule} {self.location}: {self.message}"

    def as_csv_row(self) -> list[str]:
        return [self.level, self.rule, self.location, self.message]


def has_errors(diagnostics) -> bool:
    return any(d.level == LEVEL_ERROR for d in diagnostics)


class BpMeasureError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(BpMeasureError):
    """Syntax error with a 1-based source position."""

    def __init__(self, message: str, line: int = 1, column: int = 1, expected: str | None = None):
        self.line = line
        self.column = column
        self.expected = expected
        detail = f"{line}:{column}: {message}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


class UnknownUnitError(BpMeasureError):
    def __init__(self, symbol: str):
        self.symbol = symbol
        super().__init__(f"unknown unit {symbol!r}")


class DimensionMismatchError(BpMeasureError):
    def __init__(self, path: str, found, expected):
        self.path = path
        self.found = found
        self.expected = expected
        super().__init__(f"{path}: found {found}, expected {expected}")


class UnresolvedRefError(BpMeasureError):
    def __init__(self, ref: str, context: str = ""):
        self.ref = ref
        self.context = context
        msg = f"unresolved measure reference {ref!r}"
        if context:
            msg += f" in {context}"
        super().__init__(msg)


class UnboundRefError(BpMeasureError):
    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"no value bound for reference {ref!r}")


class EmptyAggregationError(BpMeasureError):
    def __init__(self, context: str):
        self.context = context
        super().__init__(f"aggregation over zero values: {context}")


class NegativeDurationError(BpMeasureError):
    def __init__(self, context: str):
        self.context = context
        super().__init__(f"negative duration: {context}")


class UnknownMeasureError(BpMeasureError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown measure kind {name!r}")


class UnknownElementError(BpMeasureError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown element {name!r}")


class UnknownInstanceError(BpMeasureError):
    def __init__(self, process_id: str, scope: str = ""):
        self.process_id = process_id
        self.scope = scope
        msg = f"no log records for process instance {process_id!r}"
        if scope:
            msg += f" in scope {scope!r}"
        super().__init__(msg)


class AttachmentError(BpMeasureError):
    def __init__(self, measure: str, element: str, element_kind: str):
        self.measure = measure
        self.element = element
        self.element_kind = element_kind
        super().__init__(
            f"measure {measure!r} may not attach to {element_kind} {element!r}"
        )


class CycleError(BpMeasureError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("measure dependency cycle: " + " -> ".join(cycle))


class MissingFieldError(BpMeasureError):
    def __init__(self, element: str, measure: str, field: str):
        self.element = element
        self.measure = measure
        self.field = field
        super().__init__(
            f"log rows for {element!r} carry no {field} value required by measure {measure!r}"
        )


class SchemaError(BpMeasureError):
    def __init__(self, message: str):
        super().__init__(message)


class RowError(BpMeasureError):
    def __init__(self, row: int, column: str, reason: str):
        self.row = row
        self.column = column
        self.reason = reason
        super().__init__(f"row {row}, column {column!r}: {reason}")


class RegistryError(BpMeasureError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class ConfigError(BpMeasureError):
    pass


class DeadlockError(BpMeasureError):
    def __init__(self, time: int, waiting: list[str]):
        self.time = time
        self.waiting = waiting
        super().__init__(
            f"deadlock at t={time}: no event can fire; waiting: " + "; ".join(waiting)
        )
