"""Dimensioned quantities for process measures.

All arithmetic is exact: values are `fractions.Fraction`, so money and
duration math never picks up binary floating-point error.  Every unit has a
fixed rational scale to its dimension's base unit (seconds for durations and
time points, EUR for money).  Rounding happens once, at the output boundary,
with `round_currency` (half-even, two decimals).

Time points are stored as seconds since a reference day 0; dates only matter
when a log supplies full ISO timestamps, in which case day 0 is 1970-01-01.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from fractions import Fraction

from .errors import DimensionMismatchError, ParseError, UnknownUnitError

EPOCH = date(1970, 1, 1)
SECONDS_PER_DAY = 86400


class Dimension(enum.Enum):
    TIME_POINT = "TimePoint"
    DURATION = "Duration"
    CURRENCY = "Currency"
    CURRENCY_PER_DURATION = "CurrencyPerDuration"
    COUNT = "Count"
    DIMENSIONLESS = "Dimensionless"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Unit:
    """A named unit with a rational scale to its dimension's base unit."""

    symbol: str
    dimension: Dimension
    scale: Fraction

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"unit {self.symbol!r} must have a positive scale")

    def __str__(self) -> str:
        return self.symbol


class UnitTable:
    """Lookup table of known units; extendable through registry files."""

    def __init__(self, units: list[Unit] | None = None):
        self._by_symbol: dict[str, Unit] = {}
        for u in units or []:
            self.register(u)

    def register(self, unit: Unit) -> None:
        if unit.symbol in self._by_symbol:
            raise ValueError(f"duplicate unit symbol {unit.symbol!r}")
        self._by_symbol[unit.symbol] = unit

    def lookup(self, symbol: str) -> Unit:
        unit = self._by_symbol.get(symbol.strip())
        if unit is None:
            raise UnknownUnitError(symbol.strip())
        return unit

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._by_symbol

    def symbols(self) -> list[str]:
        return list(self._by_symbol)

    def copy(self) -> "UnitTable":
        return UnitTable(list(self._by_symbol.values()))


def default_units() -> UnitTable:
    """The seeded unit table: time, money, and counting units."""
    return UnitTable([
        Unit("s", Dimension.DURATION, Fraction(1)),
        Unit("min", Dimension.DURATION, Fraction(60)),
        Unit("hour", Dimension.DURATION, Fraction(3600)),
        Unit("datetime", Dimension.TIME_POINT, Fraction(1)),
        Unit("EUR", Dimension.CURRENCY, Fraction(1)),
        Unit("EUR/hour", Dimension.CURRENCY_PER_DURATION, Fraction(1, 3600)),
        Unit("EUR/min", Dimension.CURRENCY_PER_DURATION, Fraction(1, 60)),
        Unit("count", Dimension.COUNT, Fraction(1)),
    ])


# Base unit per dimension, used when arithmetic produces a new dimension.
_BASE_UNITS = {
    Dimension.TIME_POINT: Unit("datetime", Dimension.TIME_POINT, Fraction(1)),
    Dimension.DURATION: Unit("s", Dimension.DURATION, Fraction(1)),
    Dimension.CURRENCY: Unit("EUR", Dimension.CURRENCY, Fraction(1)),
    Dimension.CURRENCY_PER_DURATION: Unit("EUR/s", Dimension.CURRENCY_PER_DURATION, Fraction(1)),
    Dimension.COUNT: Unit("count", Dimension.COUNT, Fraction(1)),
    Dimension.DIMENSIONLESS: Unit("1", Dimension.DIMENSIONLESS, Fraction(1)),
}


def base_unit(dimension: Dimension) -> Unit:
    return _BASE_UNITS[dimension]


@dataclass(frozen=True)
class Quantity:
    value: Fraction
    unit: Unit

    @property
    def dimension(self) -> Dimension:
        return self.unit.dimension

    def in_base(self) -> Fraction:
        """Value expressed in the dimension's base unit."""
        return self.value * self.unit.scale

    def __str__(self) -> str:
        return f"{format_value(self)} {self.unit.symbol}"


def quantity(value, unit: Unit) -> Quantity:
    return Quantity(Fraction(value), unit)


def duration(seconds) -> Quantity:
    q = Quantity(Fraction(seconds), base_unit(Dimension.DURATION))
    if q.value < 0:
        raise ValueError(f"durations may not be negative: {seconds}")
    return q


def time_point(seconds) -> Quantity:
    return Quantity(Fraction(seconds), base_unit(Dimension.TIME_POINT))


def counted(n) -> Quantity:
    return Quantity(Fraction(n), base_unit(Dimension.COUNT))


def convert(q: Quantity, target: Unit) -> Quantity:
    """Rescale `q` into `target`; exact, so round-trips lose nothing."""
    if q.unit.dimension is not target.dimension:
        raise DimensionMismatchError(
            f"convert to {target.symbol!r}", q.unit.dimension, target.dimension
        )
    return Quantity(q.value * q.unit.scale / target.scale, target)


# ---------------------------------------------------------------------------
# Literals
# ---------------------------------------------------------------------------

_CLOCK_RE = re.compile(r"^(\d+):([0-5]\d):([0-5]\d)$")
_ISO_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})[T ](\d{2}):([0-5]\d):([0-5]\d)$")
_SUFFIXED_RE = re.compile(r"^(\d+(?:\.\d+)?)\s*([A-Za-z]+)$")

# Unit suffixes accepted in duration literals like "90s" or "3min".
_DURATION_SUFFIXES = {"s": 1, "sec": 1, "min": 60, "hour": 3600, "h": 3600}


def parse_duration(text: str) -> Quantity:
    """Parse a duration literal: `H:MM:SS`, `90s`, `3min`, `1.5hour`."""
    text = text.strip()
    m = _CLOCK_RE.match(text)
    if m:
        h, mi, s = (int(g) for g in m.groups())
        return duration(h * 3600 + mi * 60 + s)
    m = _SUFFIXED_RE.match(text)
    if m and m.group(2) in _DURATION_SUFFIXES:
        return duration(Fraction(m.group(1)) * _DURATION_SUFFIXES[m.group(2)])
    raise ParseError(f"bad duration literal {text!r}", expected="H:MM:SS or <n><unit>")


def parse_time_point(text: str, reference_date: date | None = None) -> Quantity:
    """Parse a time point: bare `H:MM:SS` (pinned to `reference_date`, default
    day 0) or a full `YYYY-MM-DDTHH:MM:SS` timestamp."""
    text = text.strip()
    m = _ISO_RE.match(text)
    if m:
        y, mo, d, h, mi, s = (int(g) for g in m.groups())
        try:
            days = (date(y, mo, d) - EPOCH).days
        except ValueError as exc:
            raise ParseError(f"bad timestamp {text!r}: {exc}") from None
        return time_point(days * SECONDS_PER_DAY + h * 3600 + mi * 60 + s)
    m = _CLOCK_RE.match(text)
    if m:
        h, mi, s = (int(g) for g in m.groups())
        if h > 23:
            raise ParseError(f"bad time of day {text!r}", expected="hour 0-23")
        offset = 0
        if reference_date is not None:
            offset = (reference_date - EPOCH).days * SECONDS_PER_DAY
        return time_point(offset + h * 3600 + mi * 60 + s)
    raise ParseError(
        f"bad time point literal {text!r}", expected="H:MM:SS or YYYY-MM-DDTHH:MM:SS"
    )


def format_duration(q: Quantity) -> str:
    """Render a duration as `H:MM:SS` (fractional seconds kept if present)."""
    total = q.in_base()
    sign = "-" if total < 0 else ""
    total = abs(total)
    whole = int(total)
    frac = total - whole
    h, rem = divmod(whole, 3600)
    mi, s = divmod(rem, 60)
    out = f"{sign}{h}:{mi:02d}:{s:02d}"
    if frac:
        # e.g. averages can land between whole seconds
        out += f"{float(frac):.6f}".rstrip("0")[1:]
    return out


def format_time_point(q: Quantity) -> str:
    """Render a time point: `H:MM:SS` within day 0, full ISO otherwise."""
    total = int(q.in_base())
    if 0 <= total < SECONDS_PER_DAY:
        h, rem = divmod(total, 3600)
        mi, s = divmod(rem, 60)
        return f"{h}:{mi:02d}:{s:02d}"
    stamp = datetime(EPOCH.year, EPOCH.month, EPOCH.day) + timedelta(seconds=total)
    return stamp.strftime("%Y-%m-%dT%H:%M:%S")


def round_half_even(value: Fraction, decimals: int) -> Fraction:
    """Exact banker's rounding of a rational to `decimals` places."""
    scale = 10 ** decimals
    n = value.numerator * scale
    d = value.denominator
    q, r = divmod(n, d)
    # divmod on a negative numerator still yields 0 <= r < d
    if 2 * r > d or (2 * r == d and q % 2 != 0):
        q += 1
    return Fraction(q, scale)


def round_currency(value: Fraction) -> Fraction:
    return round_half_even(value, 2)


def format_decimal(value: Fraction, min_decimals: int = 0) -> str:
    """Render a rational as a plain decimal if it terminates, else `p/q`."""
    twos = fives = 0
    d = value.denominator
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{value.numerator}/{value.denominator}"
    digits = max(twos, fives, min_decimals)
    scaled = value * 10 ** digits
    text = str(abs(int(scaled))).rjust(digits + 1, "0")
    sign = "-" if value < 0 else ""
    if digits == 0:
        return sign + text
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


def format_value(q: Quantity) -> str:
    """Render a quantity's value the way the measure table prints it."""
    if q.dimension is Dimension.DURATION:
        return format_duration(q)
    if q.dimension is Dimension.TIME_POINT:
        return format_time_point(q)
    if q.dimension is Dimension.CURRENCY:
        return format_decimal(round_currency(q.in_base()), min_decimals=2)
    if q.dimension is Dimension.COUNT:
        return format_decimal(q.in_base())
    return format_decimal(q.value)
