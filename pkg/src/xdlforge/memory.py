"""Namespaced vector stores and the append-only labbook.

Store directory layout::

    <store>/namespaces.json      {"<namespace>": {"dim": 2048}, ...}
    <store>/<namespace>.jsonl    one record per line: id, text, metadata, row
    <store>/<namespace>.f64      float64 vectors, row-major, one row per record
    <store>/labbook.jsonl        labbook entries, one per line
    <store>/.lock                writer lock

Queries are exact: every record is scored by cosine similarity and ties
keep insertion order.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np
from filelock import FileLock

NAMESPACES = ("documents", "xdl_pairs", "ambiguities", "flagged_steps")
LABBOOK_SCHEMA_VERSION = 1


class StorageError(RuntimeError):
    pass


class DimensionMismatch(StorageError, ValueError):
    pass


class DuplicateRecord(StorageError, ValueError):
    pass


@dataclass
class VectorRecord:
    id: str
    namespace: str
    text: str
    vector: np.ndarray
    metadata: dict = field(default_factory=dict)

    def same_content(self, other: "VectorRecord") -> bool:
        return (
            self.text == other.text
            and self.metadata == other.metadata
            and self.vector.shape == other.vector.shape
            and bool(np.array_equal(self.vector, other.vector))
        )


@dataclass(frozen=True)
class Hit:
    record: VectorRecord
    score: float
    rank: int


def content_id(prefix: str, *parts: str) -> str:
    h = hashlib.sha256("\x00".join(parts).encode("utf-8")).hexdigest()[:16]
    return f"{prefix}-{h}"


class _Namespace:
    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim
        self.records: list[VectorRecord] = []
        self.index: dict[str, int] = {}
        self._matrix: Optional[np.ndarray] = None
        self._norms: Optional[np.ndarray] = None

    def add(self, record: VectorRecord) -> None:
        self.index[record.id] = len(self.records)
        self.records.append(record)
        self._matrix = None

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        if self._matrix is None:
            if self.records:
                self._matrix = np.vstack([r.vector for r in self.records])
            else:
                self._matrix = np.zeros((0, self.dim))
            self._norms = np.linalg.norm(self._matrix, axis=1)
        return self._matrix, self._norms


class VectorStore:
    """Exact cosine top-k over JSON-lines + binary vector files."""

    def __init__(self, directory: Union[str, Path], default_dim: int = 2048, dims: Optional[dict] = None):
        self.dir = Path(directory)
        self.default_dim = default_dim
        self._lock = threading.RLock()
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(f"cannot create store directory {self.dir}: {exc}") from exc
        self._file_lock = FileLock(str(self.dir / ".lock"))
        self._spaces: dict[str, _Namespace] = {}
        meta = self._read_meta()
        for name, info in meta.items():
            self._spaces[name] = _Namespace(name, int(info["dim"]))
            self._load(self._spaces[name])
        for name, dim in (dims or {}).items():
            self.ensure_namespace(name, dim)

    # persistence

    def _meta_path(self) -> Path:
        return self.dir / "namespaces.json"

    def _read_meta(self) -> dict:
        path = self._meta_path()
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    def _write_meta(self) -> None:
        data = {name: {"dim": ns.dim} for name, ns in sorted(self._spaces.items())}
        self._meta_path().write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def _load(self, ns: _Namespace) -> None:
        jpath = self.dir / f"{ns.name}.jsonl"
        vpath = self.dir / f"{ns.name}.f64"
        if not jpath.exists():
            return
        rows = [json.loads(line) for line in jpath.read_text(encoding="utf-8").splitlines() if line.strip()]
        raw = np.fromfile(vpath, dtype="<f8") if vpath.exists() else np.zeros(0)
        if raw.size != len(rows) * ns.dim:
            raise StorageError(
                f"{vpath} holds {raw.size} values, expected {len(rows)} x {ns.dim}; store is corrupt"
            )
        vectors = raw.reshape(len(rows), ns.dim) if rows else raw.reshape(0, ns.dim)
        for row in rows:
            vec = vectors[row["row"]].copy()
            ns.add(VectorRecord(row["id"], ns.name, row["text"], vec, row.get("metadata", {})))

    def ensure_namespace(self, name: str, dim: Optional[int] = None) -> int:
        with self._lock:
            ns = self._spaces.get(name)
            if ns is None:
                ns = _Namespace(name, dim or self.default_dim)
                self._spaces[name] = ns
                with self._file_lock:
                    self._write_meta()
            elif dim is not None and dim != ns.dim:
                raise DimensionMismatch(f"namespace {name!r} has dimension {ns.dim}, not {dim}")
            return ns.dim

    def dim(self, namespace: str) -> int:
        return self.ensure_namespace(namespace)

    # records

    def upsert(self, record: VectorRecord) -> str:
        return self.upsert_many([record])[0]

    def upsert_many(self, records: Iterable[VectorRecord]) -> list[str]:
        """Insert records, persisting them before returning.  Re-inserting
        an identical record is a no-op; the same id with other content is a
        :class:`DuplicateRecord`."""
        ids = []
        with self._lock:
            fresh_by_ns: dict[str, dict[str, VectorRecord]] = {}
            for record in records:
                vec = np.asarray(record.vector, dtype=np.float64).reshape(-1)
                if not np.all(np.isfinite(vec)):
                    raise StorageError(f"record {record.id!r} has non-finite vector values")
                record = VectorRecord(record.id, record.namespace, record.text, vec, dict(record.metadata))
                for k, v in record.metadata.items():
                    if not isinstance(k, str) or not isinstance(v, str):
                        raise StorageError(f"metadata must map strings to strings, got {k!r}: {v!r}")
                dim = self.ensure_namespace(record.namespace)
                if vec.shape[0] != dim:
                    raise DimensionMismatch(
                        f"vector of dimension {vec.shape[0]} for namespace {record.namespace!r} (dimension {dim})"
                    )
                ns = self._spaces[record.namespace]
                pending = fresh_by_ns.setdefault(record.namespace, {})
                existing = ns.index.get(record.id)
                prior = ns.records[existing] if existing is not None else pending.get(record.id)
                if prior is not None:
                    if not prior.same_content(record):
                        raise DuplicateRecord(f"id {record.id!r} already stored with different content")
                else:
                    pending[record.id] = record
                ids.append(record.id)
            for name, fresh in fresh_by_ns.items():
                if fresh:
                    self._persist(self._spaces[name], list(fresh.values()))
        return ids

    def _persist(self, ns: _Namespace, fresh: list[VectorRecord]) -> None:
        try:
            with self._file_lock:
                start = len(ns.records)
                with open(self.dir / f"{ns.name}.jsonl", "a", encoding="utf-8") as fh:
                    for offset, r in enumerate(fresh):
                        line = {"id": r.id, "text": r.text, "metadata": r.metadata, "row": start + offset}
                        fh.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")
                with open(self.dir / f"{ns.name}.f64", "ab") as fh:
                    for r in fresh:
                        fh.write(r.vector.astype("<f8").tobytes())
        except OSError as exc:
            raise StorageError(f"writing namespace {ns.name!r} failed: {exc}") from exc
        for r in fresh:
            ns.add(r)

    def get(self, namespace: str, record_id: str) -> Optional[VectorRecord]:
        ns = self._spaces.get(namespace)
        if ns is None or record_id not in ns.index:
            return None
        return ns.records[ns.index[record_id]]

    def records(self, namespace: str) -> list[VectorRecord]:
        ns = self._spaces.get(namespace)
        return list(ns.records) if ns else []

    def count(self, namespace: str) -> int:
        ns = self._spaces.get(namespace)
        return len(ns.records) if ns else 0

    def namespaces(self) -> list[str]:
        return sorted(self._spaces)

    def query(
        self,
        vector,
        k: int,
        namespace: str,
        where: Union[dict, Callable[[VectorRecord], bool], None] = None,
    ) -> list[Hit]:
        """Top-``k`` records of ``namespace`` by cosine similarity,
        descending.  ``where`` restricts candidates by metadata equality
        (dict) or predicate."""
        if k < 1:
            raise ValueError("k must be >= 1")
        with self._lock:
            ns = self._spaces.get(namespace)
            if ns is None or not ns.records:
                return []
            q = np.asarray(vector, dtype=np.float64).reshape(-1)
            if q.shape[0] != ns.dim:
                raise DimensionMismatch(f"query of dimension {q.shape[0]} against {namespace!r} ({ns.dim})")
            mat, norms = ns.matrix()
            records = ns.records
        qn = float(np.linalg.norm(q))
        denom = norms * qn
        dots = mat @ q
        scores = np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)
        if where is not None:
            if isinstance(where, dict):
                items = list(where.items())
                keep = np.array([all(r.metadata.get(a) == b for a, b in items) for r in records], dtype=bool)
            else:
                keep = np.array([bool(where(r)) for r in records], dtype=bool)
            candidates = np.flatnonzero(keep)
        else:
            candidates = np.arange(len(records))
        if candidates.size == 0:
            return []
        order = candidates[np.argsort(-scores[candidates], kind="stable")][:k]
        return [Hit(records[i], float(scores[i]), rank) for rank, i in enumerate(order, 1)]


# XDL pair memory ------------------------------------------------------------


@dataclass(frozen=True)
class XdlPair:
    procedure_text: str
    xdl_text: str
    provenance: str = "seed"  # seed | pipeline
    validated: bool = True
    title: str = ""
    category: str = ""

    @property
    def id(self) -> str:
        return content_id("pair", self.procedure_text, self.xdl_text)

    def metadata(self) -> dict:
        meta = {
            "xdl": self.xdl_text,
            "provenance": self.provenance,
            "validated": "true" if self.validated else "false",
            "title": self.title,
        }
        if self.category:
            meta["category"] = self.category
        return meta

    @classmethod
    def from_record(cls, record: VectorRecord) -> "XdlPair":
        m = record.metadata
        return cls(
            procedure_text=record.text,
            xdl_text=m["xdl"],
            provenance=m.get("provenance", "seed"),
            validated=m.get("validated") == "true",
            title=m.get("title", ""),
            category=m.get("category", ""),
        )


def add_xdl_pair(store: VectorStore, gateway, pair: XdlPair) -> str:
    """Embed the procedure text and store the pair.  The XDL must parse and
    validate cleanly."""
    from .xdl import check_xdl

    doc, errors = check_xdl(pair.xdl_text)
    if doc is None or errors:
        detail = "; ".join(str(e) for e in errors[:3]) or "no document"
        raise ValueError(f"XDL for {pair.title or 'pair'} does not parse cleanly: {detail}")
    dim = store.dim("xdl_pairs")
    vec = gateway.embed_one(pair.procedure_text, dim)
    return store.upsert(VectorRecord(pair.id, "xdl_pairs", pair.procedure_text, vec, pair.metadata()))


def seed_xdl_db(store: VectorStore, gateway, pairs: Iterable[XdlPair]) -> tuple[int, list[str]]:
    """Insert seed pairs; returns ``(inserted, errors)``.  Broken pairs are
    reported and skipped, the rest still go in."""
    inserted = 0
    errors = []
    for n, pair in enumerate(pairs):
        try:
            before = store.count("xdl_pairs")
            add_xdl_pair(store, gateway, pair)
            inserted += store.count("xdl_pairs") - before
        except (ValueError, StorageError) as exc:
            errors.append(f"pair {n} ({pair.title or pair.procedure_text[:40]!r}): {exc}")
    return inserted, errors


def load_pairs(path: Union[str, Path]) -> list[XdlPair]:
    """Read a JSON-lines file of ``{"title", "procedure", "xdl"}`` objects."""
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            pairs.append(
                XdlPair(d["procedure"], d["xdl"], d.get("provenance", "seed"), True, d.get("title", ""))
            )
    return pairs


def validated_pairs(store: VectorStore) -> list[XdlPair]:
    return [XdlPair.from_record(r) for r in store.records("xdl_pairs") if r.metadata.get("validated") == "true"]


# Chemical Ambiguity Database -----------------------------------------------


@dataclass(frozen=True)
class AmbiguityEntry:
    fragment: str
    explanation: str
    source: str = "annotated_seed"  # annotated_seed | expert_answer

    def __post_init__(self):
        if not self.fragment.strip() or not self.explanation.strip():
            raise ValueError("ambiguity entries need a fragment and an explanation")

    @property
    def id(self) -> str:
        return content_id("cad", self.fragment, self.explanation)


def add_ambiguity(store: VectorStore, gateway, entry: AmbiguityEntry) -> str:
    dim = store.dim("ambiguities")
    vec = gateway.embed_one(entry.fragment, dim)
    meta = {"explanation": entry.explanation, "source": entry.source}
    return store.upsert(VectorRecord(entry.id, "ambiguities", entry.fragment, vec, meta))


def load_ambiguities(path: Union[str, Path]) -> list[AmbiguityEntry]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            out.append(AmbiguityEntry(d["fragment"], d["explanation"], d.get("source", "annotated_seed")))
    return out


# Labbook --------------------------------------------------------------------


@dataclass
class LabbookEntry:
    document: str
    title: str
    raw_procedure: str = ""
    sanitized_procedure: str = ""
    category: str = ""
    resolutions: list = field(default_factory=list)
    final_xdl: Optional[str] = None
    validation: dict = field(default_factory=dict)
    analytical: list = field(default_factory=list)
    session: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)


class Labbook:
    """Append-only JSON-lines record.  ``epoch`` (seconds) freezes every
    timestamp so replayed runs write identical bytes."""

    def __init__(self, path: Union[str, Path], epoch: Optional[float] = None, clock: Optional[Callable[[], str]] = None):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.path) + ".lock")
        if clock is not None:
            self._clock = clock
        elif epoch is not None:
            stamp = datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat()
            self._clock = lambda: stamp
        else:
            self._clock = lambda: datetime.now(timezone.utc).isoformat()

    def _count(self) -> int:
        if not self.path.exists():
            return 0
        with open(self.path, encoding="utf-8") as fh:
            return sum(1 for line in fh if line.strip())

    def append(self, entry: Union[LabbookEntry, dict]) -> str:
        body = entry.to_dict() if isinstance(entry, LabbookEntry) else dict(entry)
        with self._lock:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self._file_lock:
                    entry_id = f"entry-{self._count() + 1:05d}"
                    stamp = self._clock()
                    line = {
                        "schema": LABBOOK_SCHEMA_VERSION,
                        "id": entry_id,
                        "created": stamp,
                        **body,
                    }
                    with open(self.path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps(line, ensure_ascii=False, sort_keys=True) + "\n")
            except OSError as exc:
                raise StorageError(f"labbook write to {self.path} failed: {exc}") from exc
        return entry_id

    def read(self, title: Optional[str] = None, **filters) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                if title is not None and entry.get("title") != title:
                    continue
                if any(entry.get(k) != v for k, v in filters.items()):
                    continue
                out.append(entry)
        return out


def open_store(directory: Union[str, Path], dims: Optional[dict] = None, default_dim: int = 2048) -> VectorStore:
    store = VectorStore(directory, default_dim=default_dim, dims=dims)
    for ns in NAMESPACES:
        store.ensure_namespace(ns)
    return store
