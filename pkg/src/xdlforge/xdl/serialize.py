from __future__ import annotations

from xml.sax.saxutils import escape

from .model import XdlDocument, has_placeholder

_ATTR_ENTITIES = {'"': "&quot;", "\n": "&#10;", "\r": "&#13;", "\t": "&#9;"}
INDENT = "  "


class SerializationError(ValueError):
    pass


def _attr(name: str, value: str) -> str:
    return f'{name}="{escape(value, _ATTR_ENTITIES)}"'


def _element(tag: str, attrs, depth: int) -> str:
    parts = [tag] + [_attr(k, v) for k, v in attrs if v is not None]
    return f"{INDENT * depth}<{' '.join(parts)}/>"


def serialize_xdl(doc: XdlDocument) -> str:
    """Render ``doc`` as XDL text, one element per line, attribute order
    preserved.  Refuses documents that still hold placeholder values."""
    for step in doc.procedure:
        for name, value in step.attributes:
            if has_placeholder(value):
                raise SerializationError(f"<{step.name}> {name}={value!r} is an unresolved placeholder")
    for vessel in doc.hardware:
        if has_placeholder(vessel.id):
            raise SerializationError(f"vessel id {vessel.id!r} is an unresolved placeholder")
    for reagent in doc.reagents:
        if has_placeholder(reagent.name):
            raise SerializationError(f"reagent name {reagent.name!r} is an unresolved placeholder")

    lines = ['<?xml version="1.0" encoding="UTF-8"?>', "<Synthesis>", f"{INDENT}<Hardware>"]
    for v in doc.hardware:
        lines.append(_element("Component", [("id", v.id), ("type", v.type)], 2))
    lines += [f"{INDENT}</Hardware>", f"{INDENT}<Reagents>"]
    for r in doc.reagents:
        lines.append(
            _element("Reagent", [("name", r.name), ("role", r.role), ("concentration", r.concentration)], 2)
        )
    lines += [f"{INDENT}</Reagents>", f"{INDENT}<Procedure>"]
    for step in doc.procedure:
        lines.append(_element(step.name, step.attributes, 2))
    lines += [f"{INDENT}</Procedure>", "</Synthesis>", ""]
    return "\n".join(lines)
