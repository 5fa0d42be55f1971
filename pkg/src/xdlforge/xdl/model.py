from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional


class ErrorCode(str, enum.Enum):
    UnknownElement = "UnknownElement"
    UnknownAttribute = "UnknownAttribute"
    MissingRequiredAttribute = "MissingRequiredAttribute"
    MalformedQuantity = "MalformedQuantity"
    WrongDimension = "WrongDimension"
    UndeclaredReagent = "UndeclaredReagent"
    UndeclaredVessel = "UndeclaredVessel"
    MalformedXml = "MalformedXml"
    DuplicateDeclaration = "DuplicateDeclaration"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Location:
    line: int
    column: int

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class XdlError:
    code: ErrorCode
    message: str
    location: Optional[Location] = None
    severity: str = "error"

    @property
    def line(self) -> Optional[int]:
        return self.location.line if self.location else None

    def to_dict(self) -> dict:
        return {
            "code": self.code.value,
            "message": self.message,
            "line": self.location.line if self.location else None,
            "column": self.location.column if self.location else None,
            "severity": self.severity,
        }

    def __str__(self) -> str:
        where = f"line {self.location}" if self.location else "end of input"
        return f"{self.code.value} ({where}): {self.message}"


# Markers an LLM leaves where it could not fill a value in.
PLACEHOLDER_RE = re.compile(r"\?\?|\{\{.*?\}\}|\bTBD\b|\[UNRESOLVED\b", re.IGNORECASE)


def has_placeholder(text: str) -> bool:
    return PLACEHOLDER_RE.search(text) is not None


@dataclass(frozen=True)
class XdlStep:
    """One procedure step.  ``attributes`` is an ordered tuple of
    ``(name, raw value)`` pairs; locations do not take part in equality."""

    name: str
    attributes: tuple[tuple[str, str], ...] = ()
    location: Optional[Location] = field(default=None, compare=False)
    attribute_locations: tuple[tuple[str, Location], ...] = field(default=(), compare=False)

    def get(self, attr: str, default: Optional[str] = None) -> Optional[str]:
        for k, v in self.attributes:
            if k == attr:
                return v
        return default

    def __contains__(self, attr: str) -> bool:
        return any(k == attr for k, _ in self.attributes)

    @property
    def attrs(self) -> dict[str, str]:
        return dict(self.attributes)

    def attribute_location(self, attr: str) -> Optional[Location]:
        for k, loc in self.attribute_locations:
            if k == attr:
                return loc
        return self.location


@dataclass(frozen=True)
class Vessel:
    id: str
    type: Optional[str] = None
    location: Optional[Location] = field(default=None, compare=False)


@dataclass(frozen=True)
class Reagent:
    name: str
    role: Optional[str] = None
    concentration: Optional[str] = None
    location: Optional[Location] = field(default=None, compare=False)


@dataclass(frozen=True)
class XdlDocument:
    hardware: tuple[Vessel, ...] = ()
    reagents: tuple[Reagent, ...] = ()
    procedure: tuple[XdlStep, ...] = ()

    def __post_init__(self):
        ids = [v.id for v in self.hardware]
        if len(set(ids)) != len(ids):
            raise ValueError("vessel ids must be unique")
        names = [r.name for r in self.reagents]
        if len(set(names)) != len(names):
            raise ValueError("reagent names must be unique")

    @property
    def vessel_ids(self) -> list[str]:
        return [v.id for v in self.hardware]

    @property
    def reagent_names(self) -> list[str]:
        return [r.name for r in self.reagents]

    def reagent(self, name: str) -> Optional[Reagent]:
        for r in self.reagents:
            if r.name == name:
                return r
        return None

    def vessel(self, vessel_id: str) -> Optional[Vessel]:
        for v in self.hardware:
            if v.id == vessel_id:
                return v
        return None

    def __iter__(self) -> Iterator[XdlStep]:
        return iter(self.procedure)

    def __len__(self) -> int:
        return len(self.procedure)
