"""Scraping agent: chunked extraction of synthesis data into a knowledge
graph, plus indexing of the source document for retrieval."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import jsonschema

from .llm import ChatRequest, GatewayError, chunk_text
from .memory import VectorRecord, VectorStore
from .prompts import extract_json, render

logger = logging.getLogger(__name__)

NODE_TYPES = ("Document", "Procedure", "Chemical", "Analytical", "Purification", "Note", "Chunk", "Session")
EDGE_TYPES = (
    "contains",
    "uses_chemical",
    "has_analysis",
    "has_purification",
    "has_note",
    "indexed_as",
    "translated_as",
)
EXTRACTION_TOKENS = 4096
INDEX_TOKENS = 2048
_ITEM_EDGES = {"purification": ("Purification", "has_purification"), "analytical": ("Analytical", "has_analysis"), "notes": ("Note", "has_note")}


@lru_cache(maxsize=1)
def extraction_schema() -> dict:
    """The JSON schema every extraction fragment must satisfy."""
    text = resources.files("xdlforge").joinpath("data/extraction_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_fragment(payload) -> list[str]:
    """Schema violations as ``"<json path>: <message>"`` strings."""
    validator = jsonschema.Draft202012Validator(extraction_schema())
    errors = sorted(validator.iter_errors(payload), key=lambda e: list(e.absolute_path))
    return [f"${''.join(f'[{p!r}]' for p in e.absolute_path)}: {e.message}" for e in errors]


@dataclass(frozen=True)
class ExtractionFragment:
    chunk_index: int
    payload: dict

    def __post_init__(self):
        problems = validate_fragment(self.payload)
        if problems:
            raise ValueError(f"fragment {self.chunk_index} violates the schema: {problems[0]}")


@dataclass
class KGNode:
    id: str
    type: str
    attrs: dict = field(default_factory=dict)


class KnowledgeGraph:
    def __init__(self, document_id: str = "document"):
        self.document_id = document_id
        self.nodes: dict[str, KGNode] = {}
        self.edges: list[tuple[str, str, str]] = []
        self._edge_set: set[tuple[str, str, str]] = set()
        self.warnings: list[str] = []

    @property
    def document_node(self) -> str:
        return f"doc:{self.document_id}"

    def add_node(self, node_id: str, type_: str, **attrs) -> KGNode:
        if type_ not in NODE_TYPES:
            raise ValueError(f"unknown node type {type_!r}")
        node = self.nodes.get(node_id)
        if node is None:
            node = self.nodes[node_id] = KGNode(node_id, type_, attrs)
        return node

    def add_edge(self, src: str, type_: str, dst: str) -> None:
        if type_ not in EDGE_TYPES:
            raise ValueError(f"unknown edge type {type_!r}")
        for end in (src, dst):
            if end not in self.nodes:
                raise KeyError(f"edge endpoint {end!r} is not a node")
        edge = (src, type_, dst)
        if edge not in self._edge_set:
            self._edge_set.add(edge)
            self.edges.append(edge)

    def of_type(self, type_: str) -> list[KGNode]:
        return [n for n in self.nodes.values() if n.type == type_]

    def procedure(self, title: str) -> Optional[KGNode]:
        return self.nodes.get(f"proc:{title}")

    def procedures(self) -> list[KGNode]:
        return self.of_type("Procedure")

    def neighbours(self, node_id: str, edge_type: Optional[str] = None) -> list[KGNode]:
        return [self.nodes[d] for s, t, d in self.edges if s == node_id and (edge_type is None or t == edge_type)]

    def link_translation(self, title: str, session_id: str, verdict: str = "") -> None:
        """Attach a translation session to the procedure it came from."""
        proc = self.procedure(title)
        if proc is None:
            raise KeyError(f"no procedure titled {title!r}")
        sid = f"session:{session_id}"
        self.add_node(sid, "Session", session_id=session_id, verdict=verdict)
        self.add_edge(proc.id, "translated_as", sid)

    def counts(self) -> dict:
        out = {t: 0 for t in NODE_TYPES}
        for n in self.nodes.values():
            out[n.type] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "document": self.document_id,
            "nodes": [{"id": n.id, "type": n.type, **({"attrs": n.attrs} if n.attrs else {})} for n in self.nodes.values()],
            "edges": [list(e) for e in self.edges],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict) -> "KnowledgeGraph":
        kg = cls(data.get("document", "document"))
        for n in data["nodes"]:
            kg.add_node(n["id"], n["type"], **n.get("attrs", {}))
        for s, t, d in data["edges"]:
            kg.add_edge(s, t, d)
        kg.warnings = list(data.get("warnings", []))
        return kg

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "KnowledgeGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class _UnionFind:
    def __init__(self):
        self.parent: list[int] = []

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _key(name: str) -> str:
    return " ".join(name.casefold().split())


def merge_extractions(fragments, document_id: str = "document", title: str = "") -> KnowledgeGraph:
    """Fold fragments (in the given order) into one knowledge graph.

    Chemicals whose name/synonym/abbreviation sets intersect become one node
    carrying the union of the sets.  Procedures are identified by exact
    title; the same title with a different body is kept twice, the later one
    suffixed ``" (2)"``, ``" (3)"``... and a warning is recorded.
    """
    fragments = [f if isinstance(f, ExtractionFragment) else ExtractionFragment(i, f) for i, f in enumerate(fragments)]
    kg = KnowledgeGraph(document_id)
    kg.add_node(kg.document_node, "Document", title=title)

    # chemicals: union-find over every mention, procedure-listed names included
    uf = _UnionFind()
    mentions: list[tuple[str, list[str], list[str]]] = []
    owner: dict[str, int] = {}

    def mention(name: str, synonyms=(), abbreviations=()) -> int:
        idx = uf.make()
        mentions.append((name, list(synonyms), list(abbreviations)))
        for alias in [name, *synonyms, *abbreviations]:
            k = _key(alias)
            if k in owner:
                uf.union(owner[k], idx)
            else:
                owner[k] = idx
        return idx

    for frag in fragments:
        for chem in frag.payload["chemicals"]:
            mention(chem["name"], chem.get("synonyms", ()), chem.get("abbreviations", ()))
    for frag in fragments:
        for proc in frag.payload["procedures"]:
            for name in proc.get("chemicals", ()):
                if _key(name) not in owner:
                    mention(name)

    groups: dict[int, list[int]] = {}
    for i in range(len(mentions)):
        groups.setdefault(uf.find(i), []).append(i)
    chem_node: dict[int, str] = {}
    for root in sorted(groups):
        members = groups[root]
        name = mentions[members[0]][0]
        synonyms, abbreviations = [], []
        for i in members:
            m_name, m_syn, m_abbr = mentions[i]
            for s in [m_name, *m_syn]:
                if s != name and s not in synonyms and s not in m_abbr:
                    synonyms.append(s)
            for a in m_abbr:
                if a not in abbreviations:
                    abbreviations.append(a)
        synonyms = [s for s in synonyms if s not in abbreviations]
        nid = f"chem:{name}"
        kg.add_node(nid, "Chemical", name=name, synonyms=synonyms, abbreviations=abbreviations)
        kg.add_edge(kg.document_node, "contains", nid)
        chem_node[root] = nid

    def chemical_for(name: str) -> Optional[str]:
        k = _key(name)
        return chem_node[uf.find(owner[k])] if k in owner else None

    # procedures
    bodies: dict[str, list[str]] = {}
    resolved_title: dict[tuple[str, str], str] = {}
    for frag in fragments:
        for proc in frag.payload["procedures"]:
            base, text = proc["title"], proc["text"]
            seen = bodies.setdefault(base, [])
            if text in seen:
                final = resolved_title[(base, text)]
            else:
                seen.append(text)
                final = base if len(seen) == 1 else f"{base} ({len(seen)})"
                if len(seen) > 1:
                    msg = f"procedure title {base!r} reused with a different body; kept as {final!r}"
                    logger.warning(msg)
                    kg.warnings.append(msg)
                resolved_title[(base, text)] = final
                kg.add_node(f"proc:{final}", "Procedure", title=final, text=text, chunk=frag.chunk_index)
                kg.add_edge(kg.document_node, "contains", f"proc:{final}")
            for name in proc.get("chemicals", ()):
                nid = chemical_for(name)
                if nid:
                    kg.add_edge(f"proc:{final}", "uses_chemical", nid)

    # purification / analytical / notes, deduplicated by (procedure, text)
    counters = {key: 0 for key in _ITEM_EDGES}
    seen_items: set[tuple[str, str, str]] = set()
    for frag in fragments:
        for key, (type_, edge) in _ITEM_EDGES.items():
            for item in frag.payload[key]:
                proc_title = item.get("procedure", "")
                ident = (key, proc_title, item["text"])
                if ident in seen_items:
                    continue
                seen_items.add(ident)
                counters[key] += 1
                nid = f"{key}:{counters[key]}"
                attrs = {"text": item["text"]}
                if proc_title:
                    attrs["procedure"] = proc_title
                if item.get("technique"):
                    attrs["technique"] = item["technique"]
                kg.add_node(nid, type_, **attrs)
                parent = f"proc:{proc_title}" if proc_title and f"proc:{proc_title}" in kg.nodes else kg.document_node
                kg.add_edge(parent, edge, nid)
    return kg


def _ask_fragment(gateway, chunk: str, index: int, count: int, model: str) -> Optional[dict]:
    schema_text = json.dumps(extraction_schema(), separators=(",", ":"))
    system, user = render("extract", schema=schema_text, index=index + 1, count=count, chunk=chunk)
    reply = gateway.chat(ChatRequest(system, user, model=model, agent="scraping"))
    try:
        payload = extract_json(reply)
        problems = validate_fragment(payload)
    except ValueError as exc:
        problems = [str(exc)]
    if not problems:
        return payload
    system, user = render("extract_retry", schema=schema_text, error=problems[0], previous=reply, chunk=chunk)
    reply = gateway.chat(ChatRequest(system, user, model=model, agent="scraping"))
    try:
        payload = extract_json(reply)
        problems = validate_fragment(payload)
    except ValueError as exc:
        problems = [str(exc)]
    if problems:
        logger.warning("chunk %d skipped: %s", index, problems[0])
        return None
    return payload


def index_document(
    text: str,
    gateway,
    store: Optional[VectorStore],
    kg: KnowledgeGraph,
    max_tokens: int = INDEX_TOKENS,
) -> list[str]:
    """Split ``text`` into index chunks, add Chunk nodes and, when a store is
    given, one ``documents`` record per chunk."""
    chunks = chunk_text(text, max_tokens)
    ids = []
    start = 0
    records = []
    dim = store.dim("documents") if store is not None else None
    vectors = gateway.embed(chunks, dim) if (store is not None and chunks) else [None] * len(chunks)
    for i, (chunk, vec) in enumerate(zip(chunks, vectors)):
        rid = f"{kg.document_id}:chunk:{i}"
        end = start + len(chunk)
        kg.add_node(f"chunk:{rid}", "Chunk", index=i, start=start, end=end, record=rid)
        kg.add_edge(kg.document_node, "indexed_as", f"chunk:{rid}")
        if store is not None:
            meta = {"document": kg.document_id, "chunk": str(i), "start": str(start), "end": str(end)}
            records.append(VectorRecord(rid, "documents", chunk, vec, meta))
        ids.append(rid)
        start = end
    if records:
        store.upsert_many(records)
    return ids


def scrape_document(
    text: str,
    gateway,
    store: Optional[VectorStore] = None,
    document_id: str = "document",
    title: str = "",
    out_path: Union[str, Path, None] = None,
    model: str = "default",
    extraction_tokens: int = EXTRACTION_TOKENS,
    index_tokens: int = INDEX_TOKENS,
) -> KnowledgeGraph:
    """Extract a knowledge graph from ``text``: one extraction prompt per
    4096-token chunk, fragments merged in chunk order, and the document
    indexed at 2048-token granularity.  A gateway failure saves the partial
    graph to ``out_path`` (when given) and re-raises."""
    chunks = chunk_text(text, extraction_tokens)
    fragments: list[ExtractionFragment] = []
    skipped: list[str] = []
    try:
        for i, chunk in enumerate(chunks):
            payload = _ask_fragment(gateway, chunk, i, len(chunks), model)
            if payload is None:
                skipped.append(f"chunk {i} skipped: extraction output failed the schema twice")
                continue
            fragments.append(ExtractionFragment(i, payload))
    except GatewayError:
        if out_path is not None:
            partial = merge_extractions(fragments, document_id, title)
            partial.warnings += skipped + ["extraction aborted by a gateway error; graph is partial"]
            partial.save(out_path)
        raise
    kg = merge_extractions(fragments, document_id, title)
    kg.warnings = skipped + kg.warnings
    index_document(text, gateway, store, kg, index_tokens)
    if out_path is not None:
        kg.save(out_path)
    return kg
