"""Measure annotations: `Name[=declaration],Unit` with a typed expression AST.

An annotation names a measure, optionally declares how to compute it, and
states its unit.  Declarations are infix arithmetic plus a few named
aggregate functions:

    expr   := term (('+'|'-') term)*
    term   := factor ('*' factor)*
    factor := NUMBER UNIT? | NAME | NAME '.' NAME
            | FN '(' expr (',' expr)* ')' | '(' expr ')'
    FN     := Sum | Minus | Mult | Avg | Min | Max | Count

Names may contain spaces (`Processing Time`).  A bare name refers to the
measure of the same object; `Elem.Name` refers to a sibling element's
measure and `children.Name` fans in over the direct children that carry the
measure.  Duration literals (`0:03:00`, `90s`) and ISO timestamps are
constants.  A unitless number adopts the annotation's unit when it stands in
an additive position (the whole declaration, an operand of `+`/`-`, or an
aggregate argument); as a factor of `*` it stays a plain scalar, so
`Cost=2*Base Cost, EUR` doubles rather than squares the currency.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Union

from .errors import (
    DimensionMismatchError,
    EmptyAggregationError,
    NegativeDurationError,
    ParseError,
    UnboundRefError,
    UnresolvedRefError,
)
from .units import (
    Dimension,
    Quantity,
    Unit,
    UnitTable,
    base_unit,
    default_units,
    format_decimal,
    format_duration,
    format_time_point,
)

FUNCTIONS = ("Sum", "Minus", "Mult", "Avg", "Min", "Max", "Count")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

class RefTarget:
    """Where a measure reference points."""


@dataclass(frozen=True)
class SelfObject(RefTarget):
    def __str__(self) -> str:
        return "self"


@dataclass(frozen=True)
class ElementRef(RefTarget):
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class ChildrenRef(RefTarget):
    def __str__(self) -> str:
        return "children"


@dataclass(frozen=True)
class Const:
    value: Fraction
    unit: Unit | None = None
    # False when the unit was adopted from the annotation rather than written
    explicit_unit: bool = True

    @property
    def dimension(self) -> Dimension:
        return self.unit.dimension if self.unit else Dimension.DIMENSIONLESS


@dataclass(frozen=True)
class Ref:
    measure: str
    target: RefTarget = field(default_factory=SelfObject)

    def __str__(self) -> str:
        if isinstance(self.target, SelfObject):
            return self.measure
        return f"{self.target}.{self.measure}"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple

    def __post_init__(self):
        if self.fn not in FUNCTIONS:
            raise ValueError(f"unknown function {self.fn!r}")


@dataclass(frozen=True)
class BinOp:
    op: str
    lhs: "Expr"
    rhs: "Expr"


Expr = Union[Const, Ref, Call, BinOp]


@dataclass(frozen=True)
class MeasureAnnotation:
    name: str
    unit: Unit
    decl: Expr | None = None

    def canonical_text(self) -> str:
        if self.decl is None:
            return f"{self.name}, {self.unit.symbol}"
        return f"{self.name}={render_expr(self.decl)}, {self.unit.symbol}"


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

_SYMBOLS = "+-*(),."


@dataclass(frozen=True)
class _Token:
    kind: str  # NUMBER | CLOCK | ISO | WORD | SYM | END
    text: str
    column: int


def _lex(text: str) -> list[_Token]:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        col = i + 1
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            # ISO timestamp: 4 digits then '-'
            if j - i == 4 and text[j:j + 1] == "-":
                k = i + len("YYYY-MM-DD")
                if k < n and text[i + 4] == "-" and text[k:k + 1] in ("T", " "):
                    k += 1 + len("HH:MM:SS")
                    candidate = text[i:k]
                    if len(candidate) == 19:
                        tokens.append(_Token("ISO", candidate, col))
                        i = k
                        continue
            # clock literal H:MM:SS
            if text[j:j + 1] == ":":
                k = j
                parts = 0
                while k < n and text[k] == ":" and text[k + 1:k + 3].isdigit() and parts < 2:
                    k += 3
                    parts += 1
                if parts == 2 and not (k < n and text[k].isdigit()):
                    tokens.append(_Token("CLOCK", text[i:k], col))
                    i = k
                    continue
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            tokens.append(_Token("NUMBER", text[i:j], col))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("WORD", text[i:j], col))
            i = j
            continue
        if ch in _SYMBOLS or ch == "/":
            tokens.append(_Token("SYM", ch, col))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", column=col)
    tokens.append(_Token("END", "", n + 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _ExprParser:
    def __init__(self, tokens: list[_Token], units: UnitTable):
        self.tokens = tokens
        self.units = units
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at_sym(self, ch: str) -> bool:
        tok = self.peek()
        return tok.kind == "SYM" and tok.text == ch

    def expect_sym(self, ch: str) -> None:
        if not self.at_sym(ch):
            tok = self.peek()
            raise ParseError(f"unexpected {tok.text or 'end of input'!r}",
                             column=tok.column, expected=repr(ch))
        self.advance()

    def parse(self) -> Expr:
        expr = self.expr()
        tok = self.peek()
        if tok.kind != "END":
            raise ParseError(f"trailing input {tok.text!r}", column=tok.column)
        return expr

    def expr(self) -> Expr:
        left = self.term()
        while self.at_sym("+") or self.at_sym("-"):
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.at_sym("*"):
            self.advance()
            left = BinOp("*", left, self.factor())
        return left

    def factor(self) -> Expr:
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.advance()
            value = Fraction(tok.text)
            unit = self._try_unit()
            if unit is not None:
                return Const(value, unit)
            return Const(value, None)
        if tok.kind == "CLOCK":
            self.advance()
            h, m, s = (int(p) for p in tok.text.split(":"))
            if m > 59 or s > 59:
                raise ParseError(f"bad duration literal {tok.text!r}", column=tok.column)
            return Const(Fraction(h * 3600 + m * 60 + s), base_unit(Dimension.DURATION))
        if tok.kind == "ISO":
            self.advance()
            from .units import parse_time_point
            return Const(parse_time_point(tok.text).value, base_unit(Dimension.TIME_POINT))
        if tok.kind == "WORD":
            return self._name_or_call()
        if self.at_sym("("):
            self.advance()
            inner = self.expr()
            self.expect_sym(")")
            return inner
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}",
                         column=tok.column, expected="a value, name or '('")

    def _try_unit(self) -> Unit | None:
        """After a number, greedily match a known unit symbol (may contain '/')."""
        tok = self.peek()
        if tok.kind != "WORD":
            return None
        # two-part symbol like EUR/hour
        if (self.tokens[self.pos + 1].kind == "SYM"
                and self.tokens[self.pos + 1].text == "/"
                and self.tokens[self.pos + 2].kind == "WORD"):
            compound = f"{tok.text}/{self.tokens[self.pos + 2].text}"
            if compound in self.units:
                self.pos += 3
                return self.units.lookup(compound)
        if tok.text in self.units:
            self.advance()
            return self.units.lookup(tok.text)
        from .errors import UnknownUnitError
        raise UnknownUnitError(tok.text)

    def _name_words(self) -> str:
        words = [self.advance().text]
        while self.peek().kind == "WORD":
            words.append(self.advance().text)
        return " ".join(words)

    def _name_or_call(self) -> Expr:
        start = self.pos
        name = self._name_words()
        if self.at_sym("("):
            if " " in name or name not in FUNCTIONS:
                tok = self.tokens[start]
                raise ParseError(f"unknown function {name!r}", column=tok.column,
                                 expected="one of " + ", ".join(FUNCTIONS))
            self.advance()
            args = [self.expr()]
            while self.at_sym(","):
                self.advance()
                args.append(self.expr())
            self.expect_sym(")")
            return Call(name, tuple(args))
        if self.at_sym("."):
            self.advance()
            if self.peek().kind != "WORD":
                tok = self.peek()
                raise ParseError("expected a measure name after '.'", column=tok.column)
            measure = self._name_words()
            if name == "children":
                return Ref(measure, ChildrenRef())
            return Ref(measure, ElementRef(name))
        return Ref(name, SelfObject())


def parse_expr(text: str, units: UnitTable | None = None) -> Expr:
    return _ExprParser(_lex(text), units or default_units()).parse()


def _adopt_unit(expr: Expr, unit: Unit, additive: bool) -> Expr:
    """Give unitless constants in additive positions the annotation's unit."""
    if isinstance(expr, Const):
        if additive and expr.unit is None:
            return Const(expr.value, unit, explicit_unit=False)
        return expr
    if isinstance(expr, BinOp):
        inner = expr.op in ("+", "-") and additive
        return BinOp(expr.op, _adopt_unit(expr.lhs, unit, inner),
                     _adopt_unit(expr.rhs, unit, inner))
    if isinstance(expr, Call):
        inner = expr.fn in ("Sum", "Minus", "Avg", "Min", "Max") and additive
        return Call(expr.fn, tuple(_adopt_unit(a, unit, inner) for a in expr.args))
    return expr


def parse_measure(text: str, units: UnitTable | None = None) -> MeasureAnnotation:
    """Parse `Name[=declaration],Unit`.

    The name ends at the first '=' outside parentheses; the unit starts at
    the last ',' outside parentheses.
    """
    units = units or default_units()
    depth = 0
    eq_pos = -1
    comma_pos = -1
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0:
            if ch == "=" and eq_pos < 0:
                eq_pos = i
            elif ch == ",":
                comma_pos = i
    if comma_pos < 0:
        raise ParseError("measure annotation needs ', Unit'", column=len(text) + 1,
                         expected="','")
    if eq_pos > comma_pos:
        eq_pos = -1  # '=' inside the unit part would be garbage anyway
    name = text[:eq_pos].strip() if eq_pos >= 0 else text[:comma_pos].strip()
    if not name:
        raise ParseError("empty measure name", column=1)
    unit = units.lookup(text[comma_pos + 1:])
    decl = None
    if eq_pos >= 0:
        decl_text = text[eq_pos + 1:comma_pos].strip()
        if not decl_text:
            raise ParseError("empty declaration after '='", column=eq_pos + 2)
        decl = _adopt_unit(parse_expr(decl_text, units), unit, additive=True)
    return MeasureAnnotation(name, unit, decl)


# ---------------------------------------------------------------------------
# Type checking
# ---------------------------------------------------------------------------

Resolver = Union[Callable[[Ref], Dimension], Mapping[str, Dimension]]


def _as_resolver(resolve: Resolver) -> Callable[[Ref], Dimension]:
    if callable(resolve):
        return resolve
    def from_mapping(ref: Ref) -> Dimension:
        try:
            return resolve[ref.measure]
        except KeyError:
            raise UnresolvedRefError(str(ref)) from None
    return from_mapping


def _mul_dimension(path: str, a: Dimension, b: Dimension) -> Dimension:
    if a is Dimension.DIMENSIONLESS:
        return b
    if b is Dimension.DIMENSIONLESS:
        return a
    pair = {a, b}
    if pair == {Dimension.DURATION, Dimension.CURRENCY_PER_DURATION}:
        return Dimension.CURRENCY
    raise DimensionMismatchError(path, f"{a} * {b}", "a multipliable pair")


def _add_dimension(path: str, op: str, a: Dimension, b: Dimension) -> Dimension:
    if op == "-" and a is Dimension.TIME_POINT and b is Dimension.TIME_POINT:
        return Dimension.DURATION
    if a is not b:
        raise DimensionMismatchError(path, b, a)
    if a is Dimension.TIME_POINT:
        raise DimensionMismatchError(path, f"{a} {op} {b}", "non-time-point operands")
    return a


def typecheck(expr: Expr, resolve: Resolver, path: str = "decl") -> Dimension:
    """Return the expression's dimension or raise DimensionMismatchError.

    `resolve` maps referenced measure names to their dimensions; a mapping
    works for flat name lookups.
    """
    resolver = _as_resolver(resolve)

    def check(e: Expr, p: str) -> Dimension:
        if isinstance(e, Const):
            return e.dimension
        if isinstance(e, Ref):
            return resolver(e)
        if isinstance(e, BinOp):
            lt = check(e.lhs, f"{p}.lhs")
            rt = check(e.rhs, f"{p}.rhs")
            if e.op == "*":
                return _mul_dimension(p, lt, rt)
            return _add_dimension(p, e.op, lt, rt)
        if isinstance(e, Call):
            dims = [check(a, f"{p}.{e.fn}[{i}]") for i, a in enumerate(e.args)]
            if e.fn == "Count":
                return Dimension.COUNT
            if e.fn == "Minus":
                if len(e.args) != 2:
                    raise DimensionMismatchError(p, f"{len(e.args)} args", "Minus(a, b)")
                return _add_dimension(p, "-", dims[0], dims[1])
            if e.fn == "Mult":
                out = dims[0]
                for d in dims[1:]:
                    out = _mul_dimension(p, out, d)
                return out
            # Sum / Avg / Min / Max: homogeneous
            for i, d in enumerate(dims[1:], start=1):
                if d is not dims[0]:
                    raise DimensionMismatchError(f"{p}.{e.fn}[{i}]", d, dims[0])
            return dims[0]
        raise TypeError(f"not an expression node: {e!r}")

    return check(expr, path)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

Bindings = Union[Callable[[Ref], Quantity | None], Mapping[str, Quantity]]


def _as_bindings(bindings: Bindings) -> Callable[[Ref], Quantity | None]:
    if callable(bindings):
        return bindings
    def from_mapping(ref: Ref) -> Quantity | None:
        return bindings.get(ref.measure)
    return from_mapping


def _base(q: Quantity) -> Quantity:
    return Quantity(q.in_base(), base_unit(q.dimension))


def eval_expr(expr: Expr, bindings: Bindings) -> Quantity:
    """Evaluate in base units with exact rational arithmetic.

    Aggregate calls drop arguments whose references have no bound value (the
    referenced element never executed); everywhere else an unbound reference
    is an error.  Subtraction that would produce a negative duration is
    rejected rather than silently violating the duration invariant.
    """
    lookup = _as_bindings(bindings)

    def ev(e: Expr, path: str) -> Quantity:
        out = _ev_optional(e, path)
        if out is None:
            raise UnboundRefError(str(e))
        return out

    def _ev_optional(e: Expr, path: str) -> Quantity | None:
        if isinstance(e, Const):
            unit = e.unit or base_unit(Dimension.DIMENSIONLESS)
            return _base(Quantity(e.value, unit))
        if isinstance(e, Ref):
            bound = lookup(e)
            return _base(bound) if bound is not None else None
        if isinstance(e, BinOp):
            lhs = ev(e.lhs, f"{path}.lhs")
            rhs = ev(e.rhs, f"{path}.rhs")
            if e.op == "*":
                dim = _mul_dimension(path, lhs.dimension, rhs.dimension)
                return Quantity(lhs.value * rhs.value, base_unit(dim))
            return _add(path, e.op, lhs, rhs)
        if isinstance(e, Call):
            return _call(e, path)
        raise TypeError(f"not an expression node: {e!r}")

    def _add(path: str, op: str, lhs: Quantity, rhs: Quantity) -> Quantity:
        dim = _add_dimension(path, op, lhs.dimension, rhs.dimension)
        value = lhs.value + rhs.value if op == "+" else lhs.value - rhs.value
        if dim is Dimension.DURATION and value < 0:
            raise NegativeDurationError(path)
        return Quantity(value, base_unit(dim))

    def _call(e: Call, path: str) -> Quantity:
        if e.fn == "Minus":
            if len(e.args) != 2:
                raise DimensionMismatchError(path, f"{len(e.args)} args", "Minus(a, b)")
            return _add(path, "-", ev(e.args[0], f"{path}[0]"), ev(e.args[1], f"{path}[1]"))
        if e.fn == "Mult":
            out = ev(e.args[0], f"{path}[0]")
            for i, arg in enumerate(e.args[1:], start=1):
                nxt = ev(arg, f"{path}[{i}]")
                dim = _mul_dimension(path, out.dimension, nxt.dimension)
                out = Quantity(out.value * nxt.value, base_unit(dim))
            return out
        # aggregates: absent referenced values fall out of the fold
        present = []
        for i, arg in enumerate(e.args):
            val = _ev_optional(arg, f"{path}[{i}]")
            if val is not None:
                present.append(val)
        if e.fn == "Count":
            return Quantity(Fraction(len(present)), base_unit(Dimension.COUNT))
        if not present:
            raise EmptyAggregationError(path)
        dim = present[0].dimension
        for i, q in enumerate(present[1:], start=1):
            if q.dimension is not dim:
                raise DimensionMismatchError(f"{path}[{i}]", q.dimension, dim)
        values = [q.value for q in present]
        if e.fn == "Sum":
            result = sum(values)
        elif e.fn == "Avg":
            result = sum(values) / len(values)
        elif e.fn == "Min":
            result = min(values)
        else:
            result = max(values)
        return Quantity(result, base_unit(dim))

    return ev(expr, "decl")


def evaluate_annotation(ann: MeasureAnnotation, bindings: Bindings) -> Quantity:
    """Evaluate an annotation's declaration and convert into its unit."""
    if ann.decl is None:
        raise ValueError(f"measure {ann.name!r} has no declaration to evaluate")
    from .units import convert
    return convert(eval_expr(ann.decl, bindings), ann.unit)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_expr(expr: Expr) -> str:
    """Canonical text; reparsing it yields a structurally equal tree."""
    def prec(e: Expr) -> int:
        if isinstance(e, BinOp):
            return 1 if e.op in ("+", "-") else 2
        return 3

    def wrap(e: Expr, minimum: int) -> str:
        text = rend(e)
        return f"({text})" if prec(e) < minimum else text

    def rend(e: Expr) -> str:
        if isinstance(e, Const):
            if e.unit is None or not e.explicit_unit:
                return format_decimal(e.value)
            if e.dimension is Dimension.DURATION and e.value.denominator == 1:
                return format_duration(Quantity(e.value, e.unit))
            if e.dimension is Dimension.TIME_POINT:
                return format_time_point(Quantity(e.value, e.unit))
            return f"{format_decimal(e.value)} {e.unit.symbol}"
        if isinstance(e, Ref):
            return str(e)
        if isinstance(e, Call):
            return f"{e.fn}({', '.join(rend(a) for a in e.args)})"
        if isinstance(e, BinOp):
            # left-associative grammar: the right child needs parens at equal precedence
            p = prec(e)
            return f"{wrap(e.lhs, p)}{e.op}{wrap(e.rhs, p + 1)}"
        raise TypeError(f"not an expression node: {e!r}")

    return rend(expr)
