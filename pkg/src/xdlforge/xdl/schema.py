"""Step and attribute tables, loaded from ``data/steps.json``.

The file is data so fixtures can extend the vocabulary without code
changes; pass a custom path to :func:`load_schema` to do that.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Union

ATTRIBUTE_KINDS = {"reagent", "vessel", "quantity", "number", "boolean", "text"}


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    required: bool = False
    dimension: Optional[str] = None
    symbolic: tuple[str, ...] = ()
    choices: tuple[str, ...] = ()
    min: Optional[float] = None
    max: Optional[float] = None


@dataclass(frozen=True)
class StepSpec:
    name: str
    attributes: dict
    one_of: tuple[tuple[str, ...], ...] = ()

    def attribute(self, name: str) -> Optional[AttributeSpec]:
        return self.attributes.get(name)


@dataclass(frozen=True)
class XdlSchema:
    steps: dict
    declarations: dict
    common: dict
    version: int = 1

    @property
    def vocabulary(self) -> list[str]:
        return list(self.steps)

    def attribute(self, step: str, name: str) -> Optional[AttributeSpec]:
        spec = self.steps[step].attributes.get(name)
        return spec if spec is not None else self.common.get(name)


def _attrs(table: dict) -> dict:
    out = {}
    for name, raw in table.items():
        kind = raw["kind"]
        if kind not in ATTRIBUTE_KINDS:
            raise ValueError(f"attribute {name!r}: unknown kind {kind!r}")
        out[name] = AttributeSpec(
            name=name,
            kind=kind,
            required=bool(raw.get("required", False)),
            dimension=raw.get("dimension"),
            symbolic=tuple(raw.get("symbolic", ())),
            choices=tuple(raw.get("choices", ())),
            min=raw.get("min"),
            max=raw.get("max"),
        )
    return out


def schema_from_dict(data: dict) -> XdlSchema:
    steps = {
        name: StepSpec(
            name=name,
            attributes=_attrs(body.get("attributes", {})),
            one_of=tuple(tuple(group) for group in body.get("one_of", ())),
        )
        for name, body in data["steps"].items()
    }
    declarations = {name: _attrs(table) for name, table in data.get("declarations", {}).items()}
    return XdlSchema(
        steps=steps,
        declarations=declarations,
        common=_attrs(data.get("common_attributes", {})),
        version=data.get("version", 1),
    )


def load_schema(path: Union[str, Path, None] = None) -> XdlSchema:
    if path is None:
        return default_schema()
    return schema_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=1)
def default_schema() -> XdlSchema:
    text = resources.files("xdlforge").joinpath("data/steps.json").read_text(encoding="utf-8")
    return schema_from_dict(json.loads(text))
