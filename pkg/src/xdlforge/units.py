"""Physical quantities used in XDL attributes.

Every dimension has a small closed unit table and one canonical unit that
the simulator works in (mL, g, mmol, °C, s, rpm, mbar).  Temperatures are
accepted in °C only.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

DIMENSIONS = (
    "volume",
    "mass",
    "amount",
    "temperature",
    "time",
    "rotation-rate",
    "pressure",
)

# unit symbol -> factor to the canonical unit (first entry of each table)
UNIT_TABLES: dict[str, dict[str, float]] = {
    "volume": {"mL": 1.0, "L": 1000.0, "uL": 1e-3},
    "mass": {"g": 1.0, "mg": 1e-3, "kg": 1000.0},
    "amount": {"mmol": 1.0, "mol": 1000.0},
    "temperature": {"°C": 1.0},
    "time": {"s": 1.0, "min": 60.0, "h": 3600.0},
    "rotation-rate": {"rpm": 1.0},
    "pressure": {"mbar": 1.0, "bar": 1000.0},
}

CANONICAL_UNITS = {dim: next(iter(table)) for dim, table in UNIT_TABLES.items()}

# spellings seen in literature text, folded to a table symbol
_ALIASES = {
    "µl": "uL",
    "μl": "uL",
    "ºc": "°C",
    "degc": "°C",
    "sec": "s",
    "secs": "s",
    "second": "s",
    "seconds": "s",
    "mins": "min",
    "minute": "min",
    "minutes": "min",
    "hr": "h",
    "hrs": "h",
    "hour": "h",
    "hours": "h",
    "rev/min": "rpm",
}

_UNIT_LOOKUP: dict[str, tuple[str, str]] = {}
for _dim, _table in UNIT_TABLES.items():
    for _sym in _table:
        _UNIT_LOOKUP[_sym.casefold()] = (_sym, _dim)
for _alias, _sym in _ALIASES.items():
    _UNIT_LOOKUP[_alias] = (_sym, _UNIT_LOOKUP[_sym.casefold()][1])

_QUANTITY_RE = re.compile(
    r"^\s*(?P<num>[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*(?P<unit>\S.*?)?\s*$"
)


class QuantityError(ValueError):
    """Raised for unparseable quantities (``MalformedQuantity``) or units of
    the wrong dimension (``WrongDimension``)."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class Quantity:
    value: float
    unit: str
    dimension: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise QuantityError("MalformedQuantity", f"non-finite value {self.value!r}")
        if self.unit not in UNIT_TABLES.get(self.dimension, {}):
            raise QuantityError(
                "WrongDimension", f"unit {self.unit!r} is not a {self.dimension} unit"
            )

    def to(self, unit: str) -> Quantity:
        table = UNIT_TABLES[self.dimension]
        if unit not in table:
            raise QuantityError("WrongDimension", f"cannot convert {self.dimension} to {unit!r}")
        return Quantity(self.value * table[self.unit] / table[unit], unit, self.dimension)

    def canonical(self) -> Quantity:
        return self.to(CANONICAL_UNITS[self.dimension])

    def __str__(self) -> str:
        return f"{self.value:g} {self.unit}"


def lookup_unit(symbol: str) -> tuple[str, str] | None:
    """Return ``(table symbol, dimension)`` for a unit spelling, or None."""
    return _UNIT_LOOKUP.get(symbol.strip().casefold())


def parse_quantity(raw: str) -> Quantity:
    """Parse ``"<number> <unit>"`` keeping the unit as written (folded to
    its table symbol).  The dimension is inferred from the unit."""
    m = _QUANTITY_RE.match(raw)
    if m is None:
        raise QuantityError("MalformedQuantity", f"cannot parse a number from {raw!r}")
    unit_text = m.group("unit")
    if not unit_text:
        raise QuantityError("MalformedQuantity", f"missing unit in {raw!r}")
    found = lookup_unit(unit_text)
    if found is None:
        raise QuantityError("MalformedQuantity", f"unknown unit {unit_text!r} in {raw!r}")
    value = float(m.group("num"))
    if not math.isfinite(value):
        raise QuantityError("MalformedQuantity", f"non-finite value in {raw!r}")
    symbol, dimension = found
    return Quantity(value, symbol, dimension)


def normalize_quantity(raw: str, expected_dimension: str) -> Quantity:
    """Parse ``raw`` and convert it to the canonical unit of
    ``expected_dimension``.

    >>> normalize_quantity("2 h", "time")
    Quantity(value=7200.0, unit='s', dimension='time')
    """
    if expected_dimension not in UNIT_TABLES:
        raise ValueError(f"unknown dimension {expected_dimension!r}")
    q = parse_quantity(raw)
    if q.dimension != expected_dimension:
        raise QuantityError(
            "WrongDimension",
            f"{raw!r} is a {q.dimension}, expected {expected_dimension}",
        )
    return q.canonical()
