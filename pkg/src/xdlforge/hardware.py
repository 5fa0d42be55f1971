"""Hardware graph of a robotic synthesis platform and binding of abstract
XDL vessels/reagents onto it.

Graph files are JSON::

    {"nodes": [{"id": "reactor", "class": "reactor",
                "properties": {"max_volume": 250, "temp_min": -20, "temp_max": 120}}],
     "edges": [["pump", "reactor"], ...]}

Edges are directed; tubing that flows both ways is two edges.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .xdl.model import XdlDocument

NODE_CLASSES = ("reactor", "flask", "valve", "pump", "separator", "rotavap", "filter", "waste", "cartridge")
ROUTING_CLASSES = frozenset({"valve", "pump"})
PROCESS_CLASSES = frozenset({"reactor", "separator", "rotavap", "filter", "cartridge"})
NUMERIC_PROPERTIES = ("max_volume", "temp_min", "temp_max", "stir_max", "volume")
KNOWN_PROPERTIES = frozenset(NUMERIC_PROPERTIES + ("chemical", "synonyms"))

# substring -> class hint for abstract XDL vessel ids, checked in order
VESSEL_HINTS = (("separator", "separator"), ("rotavap", "rotavap"), ("filter", "filter"), ("reactor", "reactor"))


class GraphSchemaError(ValueError):
    """Raised by :func:`load_graph`; ``errors`` lists every violation found."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class GraphNode:
    id: str
    cls: str
    properties: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def max_volume(self) -> Optional[float]:
        return self.properties.get("max_volume")

    @property
    def temp_min(self) -> Optional[float]:
        return self.properties.get("temp_min")

    @property
    def temp_max(self) -> Optional[float]:
        return self.properties.get("temp_max")

    @property
    def stir_max(self) -> Optional[float]:
        return self.properties.get("stir_max")

    @property
    def chemical(self) -> Optional[str]:
        return self.properties.get("chemical")

    @property
    def synonyms(self) -> tuple[str, ...]:
        return tuple(self.properties.get("synonyms", ()))


class HardwareGraph:
    """Immutable typed directed graph.  Adjacency lists are kept sorted so
    every traversal is deterministic."""

    def __init__(self, nodes, edges):
        self.nodes: dict[str, GraphNode] = {n.id: n for n in nodes}
        self.edges: frozenset[tuple[str, str]] = frozenset((a, b) for a, b in edges)
        succ: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for a, b in self.edges:
            succ[a].append(b)
        self._succ = {k: tuple(sorted(v)) for k, v in succ.items()}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __getitem__(self, node_id: str) -> GraphNode:
        return self.nodes[node_id]

    def successors(self, node_id: str) -> tuple[str, ...]:
        return self._succ[node_id]

    def of_class(self, cls: str) -> list[GraphNode]:
        return sorted((n for n in self.nodes.values() if n.cls == cls), key=lambda n: n.id)

    def components(self) -> list[set[str]]:
        """Weakly connected components, used to warn about islands."""
        undirected: dict[str, set[str]] = {nid: set() for nid in self.nodes}
        for a, b in self.edges:
            undirected[a].add(b)
            undirected[b].add(a)
        seen: set[str] = set()
        out = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = {start}
            todo = [start]
            while todo:
                cur = todo.pop()
                for nxt in undirected[cur]:
                    if nxt not in comp:
                        comp.add(nxt)
                        todo.append(nxt)
            seen |= comp
            out.append(comp)
        return out

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "class": n.cls, "properties": dict(n.properties)}
                for n in sorted(self.nodes.values(), key=lambda n: n.id)
            ],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


def graph_from_dict(data) -> HardwareGraph:
    errors: list[str] = []
    if not isinstance(data, dict):
        raise GraphSchemaError(["top level must be an object with 'nodes' and 'edges'"])
    for key in data:
        if key not in ("nodes", "edges", "version", "name"):
            errors.append(f"unknown top-level key {key!r}")
    raw_nodes = data.get("nodes")
    raw_edges = data.get("edges", [])
    if not isinstance(raw_nodes, list):
        errors.append("'nodes' must be a list")
        raw_nodes = []
    if not isinstance(raw_edges, list):
        errors.append("'edges' must be a list")
        raw_edges = []

    nodes: list[GraphNode] = []
    ids: set[str] = set()
    for i, raw in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        if not isinstance(raw, dict):
            errors.append(f"{where}: must be an object")
            continue
        node_id = raw.get("id")
        if not isinstance(node_id, str) or not node_id:
            errors.append(f"{where}.id: missing or not a non-empty string")
            continue
        where = f"node {node_id!r}"
        if node_id in ids:
            errors.append(f"{where}: duplicate id")
            continue
        ids.add(node_id)
        cls = raw.get("class")
        if cls not in NODE_CLASSES:
            errors.append(f"{where}.class: {cls!r} is not one of {', '.join(NODE_CLASSES)}")
        for key in raw:
            if key not in ("id", "class", "properties"):
                errors.append(f"{where}: unknown key {key!r}")
        props = raw.get("properties", {})
        if not isinstance(props, dict):
            errors.append(f"{where}.properties: must be an object")
            props = {}
        props = dict(props)
        for key, value in props.items():
            if key not in KNOWN_PROPERTIES:
                errors.append(f"{where}.properties.{key}: unknown property")
            elif key in NUMERIC_PROPERTIES and (
                isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value)
            ):
                errors.append(f"{where}.properties.{key}: {value!r} is not a finite number")
        ok_num = {k: props[k] for k in NUMERIC_PROPERTIES if k in props and isinstance(props[k], (int, float))}
        if "max_volume" in ok_num and not ok_num["max_volume"] > 0:
            errors.append(f"{where}.properties.max_volume: must be > 0, got {ok_num['max_volume']}")
        if "volume" in ok_num and ok_num["volume"] < 0:
            errors.append(f"{where}.properties.volume: must be >= 0, got {ok_num['volume']}")
        if "stir_max" in ok_num and ok_num["stir_max"] < 0:
            errors.append(f"{where}.properties.stir_max: must be >= 0, got {ok_num['stir_max']}")
        if "temp_min" in ok_num and "temp_max" in ok_num and ok_num["temp_min"] > ok_num["temp_max"]:
            errors.append(
                f"{where}: temp_min {ok_num['temp_min']} exceeds temp_max {ok_num['temp_max']}"
            )
        if "chemical" in props:
            if not isinstance(props["chemical"], str):
                errors.append(f"{where}.properties.chemical: must be a string")
            elif cls != "flask":
                errors.append(f"{where}.properties.chemical: only flasks hold a chemical")
        if "synonyms" in props and not (
            isinstance(props["synonyms"], list) and all(isinstance(s, str) for s in props["synonyms"])
        ):
            errors.append(f"{where}.properties.synonyms: must be a list of strings")
        for k in NUMERIC_PROPERTIES:
            if k in ok_num:
                props[k] = float(ok_num[k])
        nodes.append(GraphNode(node_id, cls, props))

    edges = []
    for i, raw in enumerate(raw_edges):
        if not (isinstance(raw, (list, tuple)) and len(raw) == 2 and all(isinstance(x, str) for x in raw)):
            errors.append(f"edges[{i}]: must be a [src, dst] pair of ids")
            continue
        src, dst = raw
        for end in (src, dst):
            if end not in ids:
                errors.append(f"edges[{i}]: unknown node id {end!r}")
        if src in ids and dst in ids:
            edges.append((src, dst))
    if errors:
        raise GraphSchemaError(errors)
    return HardwareGraph(nodes, edges)


def load_graph(json_text: str) -> HardwareGraph:
    """Parse a graph file.  Raises :class:`GraphSchemaError` carrying every
    violation, not just the first."""
    try:
        data = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise GraphSchemaError([f"invalid JSON: {exc}"]) from None
    return graph_from_dict(data)


def find_path(graph: HardwareGraph, src_id: str, dst_id: str) -> Optional[list[str]]:
    """Shortest directed path from ``src_id`` to ``dst_id`` whose interior
    nodes are all valves or pumps.  None if there is no such path."""
    for node_id in (src_id, dst_id):
        if node_id not in graph:
            raise KeyError(f"unknown node id {node_id!r}")
    if src_id == dst_id:
        return [src_id]
    parent: dict[str, str] = {src_id: src_id}
    queue = deque([src_id])
    while queue:
        cur = queue.popleft()
        for nxt in graph.successors(cur):
            if nxt in parent:
                continue
            parent[nxt] = cur
            if nxt == dst_id:
                path = [nxt]
                while path[-1] != src_id:
                    path.append(parent[path[-1]])
                return path[::-1]
            if graph[nxt].cls in ROUTING_CLASSES:
                queue.append(nxt)
    return None


@dataclass(frozen=True)
class BindingError:
    code: str  # MissingHardware | MissingReagentFlask
    name: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "name": self.name, "message": self.message}

    def __str__(self) -> str:
        return f"{self.code}({self.name!r}): {self.message}"


@dataclass
class Binding:
    vessel_map: dict = field(default_factory=dict)
    reagent_map: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"vessel_map": dict(self.vessel_map), "reagent_map": dict(self.reagent_map)}


def vessel_class_hint(vessel_id: str, declared_type: Optional[str] = None, overrides: Optional[dict] = None) -> str:
    """Class a graph node must have to host this XDL vessel."""
    if overrides and vessel_id in overrides:
        return overrides[vessel_id]
    if declared_type and declared_type in PROCESS_CLASSES:
        return declared_type
    lowered = vessel_id.casefold()
    for needle, cls in VESSEL_HINTS:
        if needle in lowered:
            return cls
    return "reactor"


def _names(node: GraphNode) -> set[str]:
    names = {s.casefold().strip() for s in node.synonyms}
    if node.chemical:
        names.add(node.chemical.casefold().strip())
    return names


def bind_hardware(
    doc: XdlDocument,
    graph: HardwareGraph,
    overrides: Optional[dict] = None,
    synonyms: Optional[dict] = None,
) -> tuple[Binding, list[BindingError]]:
    """Map XDL vessels onto distinct process nodes and reagents onto flasks.

    Vessels are bound in declaration order to the lexicographically smallest
    free node of the hinted class.  ``synonyms`` optionally maps a reagent
    name to extra names a flask may be labelled with.
    """
    binding = Binding()
    errors: list[BindingError] = []
    used: set[str] = set()
    for vessel in doc.hardware:
        cls = vessel_class_hint(vessel.id, vessel.type, overrides)
        candidates = [n.id for n in graph.of_class(cls) if n.id not in used]
        if not candidates:
            errors.append(
                BindingError("MissingHardware", vessel.id, f"no free '{cls}' node in the graph for vessel {vessel.id!r}")
            )
            continue
        binding.vessel_map[vessel.id] = candidates[0]
        used.add(candidates[0])

    flasks = graph.of_class("flask")
    for reagent in doc.reagents:
        wanted = {reagent.name.casefold().strip()}
        for alias in (synonyms or {}).get(reagent.name, ()):
            wanted.add(alias.casefold().strip())
        match = next((f.id for f in flasks if _names(f) & wanted), None)
        if match is None:
            errors.append(
                BindingError("MissingReagentFlask", reagent.name, f"no flask holds {reagent.name!r}")
            )
            continue
        binding.reagent_map[reagent.name] = match
    return binding, errors
