from __future__ import annotations

from typing import Optional

from ..units import QuantityError, parse_quantity
from .model import ErrorCode, Location, Reagent, Vessel, XdlDocument, XdlError, XdlStep
from .schema import AttributeSpec, XdlSchema, default_schema
from .xmlscan import Element, LineIndex, scan

SECTIONS = ("Hardware", "Reagents", "Procedure")
_TRUE_FALSE = {"true", "false"}


def check_value(spec: AttributeSpec, value: str) -> Optional[tuple[ErrorCode, str]]:
    """Syntactic check of one attribute value.  Dimension mismatches are
    left to :func:`validate_document`."""
    if spec.kind == "quantity":
        if value.strip().casefold() in spec.symbolic:
            return None
        try:
            parse_quantity(value)
        except QuantityError as exc:
            return ErrorCode.MalformedQuantity, f"{spec.name}: {exc.message}"
    elif spec.kind == "number":
        try:
            number = float(value)
        except ValueError:
            return ErrorCode.MalformedQuantity, f"{spec.name}: {value!r} is not a number"
        if (spec.min is not None and number < spec.min) or (spec.max is not None and number > spec.max):
            return ErrorCode.MalformedQuantity, f"{spec.name}: {value} outside [{spec.min}, {spec.max}]"
    elif spec.kind == "boolean":
        if value.strip().casefold() not in _TRUE_FALSE:
            return ErrorCode.MalformedQuantity, f"{spec.name}: {value!r} is not true/false"
    elif spec.choices and value not in spec.choices:
        return ErrorCode.MalformedQuantity, f"{spec.name}: {value!r} not one of {list(spec.choices)}"
    return None


class _Parser:
    def __init__(self, source: str, schema: XdlSchema):
        self.source = source
        self.schema = schema
        self.index = LineIndex(source)
        self.errors: list[XdlError] = []

    def loc(self, offset: Optional[int]) -> Optional[Location]:
        if offset is None:
            return None
        return Location(*self.index(offset))

    def error(self, code: ErrorCode, message: str, offset: Optional[int]) -> None:
        self.errors.append(XdlError(code, message, self.loc(offset)))

    def parse(self) -> Optional[XdlDocument]:
        root, issues = scan(self.source)
        for issue in issues:
            self.error(ErrorCode.MalformedXml, issue.message, issue.offset)
        if root is None:
            if not issues:
                self.error(ErrorCode.MalformedXml, "no root element", None)
            return None
        if root.tag != "Synthesis":
            self.error(ErrorCode.UnknownElement, f"root must be <Synthesis>, found <{root.tag}>", root.offset)
            return None
        for attr in root.attrs:
            self.error(ErrorCode.UnknownAttribute, f"<Synthesis> takes no attribute '{attr.name}'", attr.offset)

        seen_sections: set[str] = set()
        hardware: list[Vessel] = []
        reagents: list[Reagent] = []
        steps: list[XdlStep] = []
        for child in root.children:
            if child.tag not in SECTIONS:
                self.error(ErrorCode.UnknownElement, f"unknown section <{child.tag}>", child.offset)
                continue
            if child.tag in seen_sections:
                self.error(ErrorCode.DuplicateDeclaration, f"section <{child.tag}> declared twice", child.offset)
            seen_sections.add(child.tag)
            if child.tag == "Hardware":
                self._hardware(child, hardware)
            elif child.tag == "Reagents":
                self._reagents(child, reagents)
            else:
                self._procedure(child, steps)
        return XdlDocument(tuple(hardware), tuple(reagents), tuple(steps))

    def _declared_attrs(self, el: Element, kind: str) -> Optional[dict[str, str]]:
        table = self.schema.declarations[kind]
        values: dict[str, str] = {}
        for attr in el.attrs:
            spec = table.get(attr.name) or self.schema.common.get(attr.name)
            if spec is None:
                self.error(ErrorCode.UnknownAttribute, f"<{kind}> has no attribute '{attr.name}'", attr.offset)
                continue
            values[attr.name] = attr.value
        ok = True
        for name, spec in table.items():
            if spec.required and name not in values:
                self.error(ErrorCode.MissingRequiredAttribute, f"<{kind}> requires '{name}'", el.offset)
                ok = False
        return values if ok else None

    def _children(self, section: Element, expected: str):
        for el in section.children:
            if el.malformed:
                continue
            if el.tag != expected:
                self.error(
                    ErrorCode.UnknownElement,
                    f"<{section.tag}> may only contain <{expected}>, found <{el.tag}>",
                    el.offset,
                )
                continue
            yield el

    def _hardware(self, section: Element, out: list[Vessel]) -> None:
        for el in self._children(section, "Component"):
            values = self._declared_attrs(el, "Component")
            if values is None:
                continue
            if any(v.id == values["id"] for v in out):
                self.error(ErrorCode.DuplicateDeclaration, f"vessel '{values['id']}' declared twice", el.offset)
                continue
            out.append(Vessel(values["id"], values.get("type"), self.loc(el.offset)))

    def _reagents(self, section: Element, out: list[Reagent]) -> None:
        for el in self._children(section, "Reagent"):
            values = self._declared_attrs(el, "Reagent")
            if values is None:
                continue
            if any(r.name == values["name"] for r in out):
                self.error(ErrorCode.DuplicateDeclaration, f"reagent '{values['name']}' declared twice", el.offset)
                continue
            out.append(
                Reagent(values["name"], values.get("role"), values.get("concentration"), self.loc(el.offset))
            )

    def _procedure(self, section: Element, out: list[XdlStep]) -> None:
        for el in section.children:
            if el.malformed:
                continue
            spec = self.schema.steps.get(el.tag)
            if spec is None:
                self.error(ErrorCode.UnknownElement, f"unsupported step <{el.tag}>", el.offset)
                continue
            for child in el.children:
                self.error(ErrorCode.UnknownElement, f"step <{el.tag}> cannot contain <{child.tag}>", child.offset)
            attributes = []
            locations = []
            for attr in el.attrs:
                aspec = self.schema.attribute(el.tag, attr.name)
                if aspec is None:
                    self.error(ErrorCode.UnknownAttribute, f"<{el.tag}> has no attribute '{attr.name}'", attr.offset)
                else:
                    problem = check_value(aspec, attr.value)
                    if problem is not None:
                        self.error(problem[0], problem[1], attr.offset)
                attributes.append((attr.name, attr.value))
                locations.append((attr.name, self.loc(attr.offset)))
            present = {name for name, _ in attributes}
            for name, aspec in spec.attributes.items():
                if aspec.required and name not in present:
                    self.error(ErrorCode.MissingRequiredAttribute, f"<{el.tag}> requires '{name}'", el.offset)
            for group in spec.one_of:
                if not present.intersection(group):
                    self.error(
                        ErrorCode.MissingRequiredAttribute,
                        f"<{el.tag}> requires one of {', '.join(group)}",
                        el.offset,
                    )
            out.append(XdlStep(el.tag, tuple(attributes), self.loc(el.offset), tuple(locations)))


def parse_xdl(source: str, schema: Optional[XdlSchema] = None) -> tuple[Optional[XdlDocument], list[XdlError]]:
    """Parse XDL text, collecting every syntactic error in one pass.

    Never raises on bad input.  The document is None only when no
    ``<Synthesis>`` skeleton could be recovered.
    """
    parser = _Parser(source, schema or default_schema())
    doc = parser.parse()
    errors = sorted(parser.errors, key=lambda e: (e.location is None, e.location or (0, 0)))
    return doc, errors
