from __future__ import annotations

from typing import Optional

from ..units import QuantityError, parse_quantity
from .model import ErrorCode, XdlDocument, XdlError
from .schema import XdlSchema, default_schema


def validate_document(doc: XdlDocument, schema: Optional[XdlSchema] = None) -> list[XdlError]:
    """Semantic checks on a parsed document: every reagent and vessel
    reference must be declared and every quantity must carry a unit of the
    attribute's dimension.  Pure and idempotent."""
    schema = schema or default_schema()
    vessels = set(doc.vessel_ids)
    reagents = set(doc.reagent_names)
    errors: list[XdlError] = []
    for index, step in enumerate(doc.procedure):
        if step.name not in schema.steps:
            continue
        for name, value in step.attributes:
            spec = schema.attribute(step.name, name)
            if spec is None:
                continue
            where = step.attribute_location(name)
            if spec.kind == "reagent" and value not in reagents:
                errors.append(
                    XdlError(
                        ErrorCode.UndeclaredReagent,
                        f"step {index + 1} <{step.name}> {name}='{value}' is not a declared reagent",
                        where,
                    )
                )
            elif spec.kind == "vessel" and value not in vessels:
                errors.append(
                    XdlError(
                        ErrorCode.UndeclaredVessel,
                        f"step {index + 1} <{step.name}> {name}='{value}' is not declared in <Hardware>",
                        where,
                    )
                )
            elif spec.kind == "quantity" and value.strip().casefold() not in spec.symbolic:
                try:
                    q = parse_quantity(value)
                except QuantityError:
                    # already reported by the parser
                    continue
                if q.dimension != spec.dimension:
                    errors.append(
                        XdlError(
                            ErrorCode.WrongDimension,
                            f"step {index + 1} <{step.name}> {name}='{value}' is a {q.dimension}, "
                            f"expected {spec.dimension}",
                            where,
                        )
                    )
    return errors


def check_xdl(source: str, schema: Optional[XdlSchema] = None):
    """Parse and validate in one go; returns ``(document, errors)``."""
    from .parser import parse_xdl

    doc, errors = parse_xdl(source, schema)
    if doc is not None:
        errors = errors + validate_document(doc, schema)
    return doc, errors
