"""Catalog of measure kinds: groups, attachment rules, units, declarations.

The registry is data, not code: a line-oriented file can extend or replace
the defaults, so new measure kinds (or a different attachment matrix) ship
without touching the engine.  File format, one record per line, `#` comments:

    extend                          # header directive: extend | replace
    name | group | dimension | unit | attaches | source-or-implicit [| implicit]
    unit | symbol | dimension | scale

`attaches` is a comma-separated subset of task, decision, process, datastore.
The sixth field is a log column source (start, end, processing, occurrence),
an implicit container declaration written as `=Expr`, or `-`; a kind that has
both a log source and a container declaration puts the source in field six
and the declaration in field seven.  Unit scales are rationals (`1/3600`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    BpMeasureError,
    Diagnostic,
    LEVEL_ERROR,
    ParseError,
    RegistryError,
    UnknownMeasureError,
    UnknownUnitError,
)
from .measures import Call, ChildrenRef, Expr, Ref, parse_expr, render_expr, typecheck
from .model import CONTAINER
from .units import Dimension, Unit, UnitTable, default_units

GROUPS = ("Time", "Money", "Resource", "Work", "Quality")

SOURCE_START = "start"
SOURCE_END = "end"
SOURCE_PROCESSING = "processing"
SOURCE_OCCURRENCE = "occurrence"
SOURCES = (SOURCE_START, SOURCE_END, SOURCE_PROCESSING, SOURCE_OCCURRENCE)

_SOURCE_DIMENSION = {
    SOURCE_START: Dimension.TIME_POINT,
    SOURCE_END: Dimension.TIME_POINT,
    SOURCE_PROCESSING: Dimension.DURATION,
    SOURCE_OCCURRENCE: Dimension.COUNT,
}

ATTACH_TAGS = ("task", "decision", "process", "datastore")


@dataclass(frozen=True)
class MeasureKind:
    name: str
    group: str
    dimension: Dimension
    default_unit: Unit
    attaches_to: frozenset[str]
    primitive_source: str | None = None
    container_implicit: Expr | None = None
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class Registry:
    kinds: tuple[MeasureKind, ...]
    units: UnitTable = field(default_factory=default_units)

    def kind(self, name: str) -> MeasureKind:
        for k in self.kinds:
            if k.name == name or name in k.aliases:
                return k
        raise UnknownMeasureError(name)

    def has_kind(self, name: str) -> bool:
        try:
            self.kind(name)
            return True
        except UnknownMeasureError:
            return False

    def canonical_name(self, name: str) -> str:
        return self.kind(name).name


def default_registry() -> Registry:
    """The stock measure catalog.

    Start/End Time also answer to the annotation spellings "Start" and
    "Finish"; their values come straight from the log.  Processing Time and
    Cost aggregate over children on containers; Total Time spans a
    container's own start and end.
    """
    units = default_units()
    sum_children = lambda name: Call("Sum", (Ref(name, ChildrenRef()),))
    kinds = (
        MeasureKind("Start Time", "Time", Dimension.TIME_POINT, units.lookup("datetime"),
                    frozenset({"task", "decision", "process"}),
                    primitive_source=SOURCE_START, aliases=("Start",)),
        MeasureKind("End Time", "Time", Dimension.TIME_POINT, units.lookup("datetime"),
                    frozenset({"task", "decision", "process"}),
                    primitive_source=SOURCE_END, aliases=("Finish",)),
        MeasureKind("Processing Time", "Time", Dimension.DURATION, units.lookup("min"),
                    frozenset({"task", "process"}),
                    primitive_source=SOURCE_PROCESSING,
                    container_implicit=sum_children("Processing Time")),
        MeasureKind("Total Time", "Time", Dimension.DURATION, units.lookup("min"),
                    frozenset({"process"}),
                    container_implicit=Call("Minus", (Ref("End Time"), Ref("Start Time")))),
        MeasureKind("Cost", "Money", Dimension.CURRENCY, units.lookup("EUR"),
                    frozenset({"task", "process"}),
                    container_implicit=sum_children("Cost")),
        MeasureKind("Execution Count", "Work", Dimension.COUNT, units.lookup("count"),
                    frozenset({"task", "decision", "process"}),
                    primitive_source=SOURCE_OCCURRENCE),
    )
    return Registry(kinds, units)


def check_attachment(registry: Registry, measure_name: str, element_kind: str) -> Diagnostic | None:
    """None when the measure may attach to the element kind, else a
    diagnostic (unknown measures get their own rule id)."""
    try:
        kind = registry.kind(measure_name)
    except UnknownMeasureError:
        return Diagnostic(LEVEL_ERROR, "UNKNOWN_MEASURE", element_kind,
                          f"measure {measure_name!r} is not in the registry")
    if element_kind not in kind.attaches_to:
        return Diagnostic(LEVEL_ERROR, "ATTACH_ILLEGAL", element_kind,
                          f"measure {kind.name!r} does not attach to {element_kind} elements "
                          f"(allowed: {', '.join(sorted(kind.attaches_to))})")
    return None


def implicit_declaration(registry: Registry, measure_name: str, object_kind: str) -> Expr | None:
    """The registry-supplied declaration for a measure on a primitive or
    container object, when one exists.  Log-sourced primitives need none."""
    kind = registry.kind(measure_name)
    if object_kind == CONTAINER:
        return kind.container_implicit
    return None


def registry_resolver(registry: Registry):
    """Dimension resolver for typechecking expressions against kind names."""
    def resolve(ref: Ref) -> Dimension:
        return registry.kind(ref.measure).dimension
    return resolve


def validate_registry(registry: Registry) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    seen: set[str] = set()
    for kind in registry.kinds:
        loc = kind.name
        for name in (kind.name, *kind.aliases):
            if name in seen:
                out.append(Diagnostic(LEVEL_ERROR, "REG_DUP_KIND", loc,
                                      f"duplicate measure kind name {name!r}"))
            seen.add(name)
        if kind.group not in GROUPS:
            out.append(Diagnostic(LEVEL_ERROR, "REG_GROUP", loc,
                                  f"unknown group {kind.group!r}"))
        if kind.default_unit.dimension is not kind.dimension:
            out.append(Diagnostic(LEVEL_ERROR, "REG_UNIT_DIM", loc,
                                  f"unit {kind.default_unit.symbol!r} is not a {kind.dimension}"))
        for tag in kind.attaches_to:
            if tag not in ATTACH_TAGS:
                out.append(Diagnostic(LEVEL_ERROR, "REG_ATTACH", loc,
                                      f"unknown element kind {tag!r}"))
        if kind.primitive_source is not None:
            expected = _SOURCE_DIMENSION.get(kind.primitive_source)
            if expected is None:
                out.append(Diagnostic(LEVEL_ERROR, "REG_SOURCE", loc,
                                      f"unknown log source {kind.primitive_source!r}"))
            elif expected is not kind.dimension:
                out.append(Diagnostic(LEVEL_ERROR, "REG_SOURCE", loc,
                                      f"log source {kind.primitive_source!r} yields {expected}, "
                                      f"kind declares {kind.dimension}"))
        if kind.container_implicit is not None:
            try:
                got = typecheck(kind.container_implicit, registry_resolver(registry))
            except BpMeasureError as exc:
                out.append(Diagnostic(LEVEL_ERROR, "REG_IMPLICIT", loc, str(exc)))
            else:
                if got is not kind.dimension:
                    out.append(Diagnostic(LEVEL_ERROR, "REG_IMPLICIT", loc,
                                          f"implicit declaration is {got}, "
                                          f"kind declares {kind.dimension}"))
    return out


# ---------------------------------------------------------------------------
# Registry files
# ---------------------------------------------------------------------------

def load_registry(text: str, base: Registry | None = None) -> Registry:
    """Parse a registry file.  `extend` starts from the defaults (or `base`),
    `replace` from an empty catalog (seeded units stay available).  Raises
    RegistryError carrying diagnostics on any invalid record."""
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    if not lines:
        raise ParseError("registry file is empty", 1, 1, expected="'extend' or 'replace'")
    directive_line, directive = lines[0]
    if directive not in ("extend", "replace"):
        raise ParseError(f"bad directive {directive!r}", directive_line, 1,
                         expected="'extend' or 'replace'")

    base = base or default_registry()
    units = base.units.copy()
    kinds: list[MeasureKind] = list(base.kinds) if directive == "extend" else []
    diagnostics: list[Diagnostic] = []
    file_names: set[str] = set()

    def err(lineno: int, message: str) -> None:
        diagnostics.append(Diagnostic(LEVEL_ERROR, "REG_RECORD", f"line {lineno}", message))

    for lineno, line in lines[1:]:
        fields = [f.strip() for f in line.split("|")]
        if fields[0] == "unit":
            if len(fields) != 4:
                err(lineno, "unit records take: unit | symbol | dimension | scale")
                continue
            _, symbol, dim_text, scale_text = fields
            try:
                dim = Dimension(dim_text)
                scale = Fraction(scale_text)
                units.register(Unit(symbol, dim, scale))
            except (ValueError, ZeroDivisionError) as exc:
                err(lineno, f"bad unit record: {exc}")
            continue
        if len(fields) not in (6, 7):
            err(lineno, "kind records take 6 or 7 '|' fields")
            continue
        name, group, dim_text, unit_sym, attach_text, tail = fields[:6]
        implicit_text = fields[6] if len(fields) == 7 else None
        if name in file_names:
            err(lineno, f"duplicate measure kind {name!r} in file")
            continue
        file_names.add(name)
        try:
            dim = Dimension(dim_text)
        except ValueError:
            err(lineno, f"unknown dimension {dim_text!r}")
            continue
        try:
            unit = units.lookup(unit_sym)
        except UnknownUnitError as exc:
            err(lineno, str(exc))
            continue
        attaches = frozenset(t.strip() for t in attach_text.replace(",", " ").split())
        source = None
        implicit = None
        try:
            if tail.startswith("="):
                implicit = parse_expr(tail[1:], units)
            elif tail != "-":
                source = tail
            if implicit_text and implicit_text != "-":
                if not implicit_text.startswith("="):
                    raise ParseError("seventh field must be '=Expr' or '-'", lineno, 1)
                implicit = parse_expr(implicit_text[1:], units)
        except BpMeasureError as exc:
            err(lineno, f"bad declaration: {exc}")
            continue
        kind = MeasureKind(name, group, dim, unit, attaches, source, implicit)
        # a redefinition overrides in place
        for i, existing in enumerate(kinds):
            if existing.name == name:
                kinds[i] = kind
                break
        else:
            kinds.append(kind)

    registry = Registry(tuple(kinds), units)
    diagnostics.extend(validate_registry(registry))
    if diagnostics:
        raise RegistryError(diagnostics)
    return registry


def render_registry(registry: Registry) -> str:
    """Stable textual form of a registry (snapshot/debugging aid)."""
    lines = ["replace"]
    for kind in registry.kinds:
        source_or_dash = kind.primitive_source or "-"
        parts = [
            kind.name,
            kind.group,
            str(kind.dimension),
            kind.default_unit.symbol,
            ",".join(sorted(kind.attaches_to)),
            source_or_dash,
        ]
        if kind.container_implicit is not None:
            parts.append("=" + render_expr(kind.container_implicit))
        lines.append(" | ".join(parts))
    return "\n".join(lines) + "\n"
