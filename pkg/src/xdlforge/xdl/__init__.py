"""XDL document model, multi-error parser, validator and serializer."""
from .model import ErrorCode, Location, Reagent, Vessel, XdlDocument, XdlError, XdlStep, has_placeholder
from .parser import parse_xdl
from .schema import XdlSchema, default_schema, load_schema
from .serialize import SerializationError, serialize_xdl
from .validate import check_xdl, validate_document

__all__ = [
    "ErrorCode",
    "Location",
    "Reagent",
    "SerializationError",
    "Vessel",
    "XdlDocument",
    "XdlError",
    "XdlSchema",
    "XdlStep",
    "check_xdl",
    "default_schema",
    "has_placeholder",
    "load_schema",
    "parse_xdl",
    "serialize_xdl",
    "validate_document",
]
