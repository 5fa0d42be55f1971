"""Procedure agent: resolve ambiguities and categorise procedures.

Inputs to the sanitisation prompt come from four places: the Chemical
Ambiguity Database (``ambiguities`` namespace) searched per sentence, a
chemical lookup client (offline cache first, PubChem-style REST when
enabled), the shipped solvent table, and the indexed source document when
the procedure points at a general procedure.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Union
from urllib.parse import quote

from .llm import ChatRequest
from .memory import AmbiguityEntry, VectorStore, add_ambiguity
from .prompts import extract_json, render
from .xdl.model import has_placeholder

logger = logging.getLogger(__name__)

CATEGORIES = ("executable", "blueprint", "incomplete")
CAD_THRESHOLD = 0.55
PUBCHEM_URL = "https://pubchem.ncbi.nlm.nih.gov/rest/pug"
_BLUEPRINT_RE = re.compile(r"\b(?:general procedure|GP\s*-?\s*\d+|according to (?:the )?(?:general )?procedure)\b", re.IGNORECASE)

AskFn = Callable[[str, str], Optional[str]]


# chemical data -----------------------------------------------------------------


@dataclass(frozen=True)
class ChemicalInfo:
    query: str
    iupac_name: Optional[str] = None
    molar_mass: Optional[float] = None
    synonyms: tuple[str, ...] = ()

    def __post_init__(self):
        if self.molar_mass is not None and not self.molar_mass > 0:
            raise ValueError(f"molar mass must be positive, got {self.molar_mass}")


def _fold(name: str) -> str:
    return " ".join(name.casefold().split())


class ChemicalClient:
    """Cache-first chemical lookup.

    The shipped offline cache is always consulted first.  Network lookups
    happen only with ``live=True``; results are added to the cache (and
    written back to ``cache_path`` when one is given).
    """

    def __init__(
        self,
        cache_path: Union[str, Path, None] = None,
        live: bool = False,
        base_url: str = PUBCHEM_URL,
        http=None,
        retries: int = 2,
    ):
        self.cache_path = Path(cache_path) if cache_path else None
        self.live = live
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self._http = http
        self.network_calls = 0
        self.misses: list[str] = []
        self._entries: dict[str, dict] = {}
        shipped = json.loads(
            resources.files("xdlforge").joinpath("data/chemical_cache.json").read_text(encoding="utf-8")
        )
        self._merge(shipped["compounds"])
        if self.cache_path and self.cache_path.exists():
            self._merge(json.loads(self.cache_path.read_text(encoding="utf-8")).get("compounds", {}))

    def _merge(self, compounds: dict) -> None:
        for key, entry in compounds.items():
            self._entries[_fold(key)] = entry
            for syn in entry.get("synonyms", ()):
                self._entries.setdefault(_fold(syn), entry)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def _info(self, query: str, entry: dict) -> ChemicalInfo:
        return ChemicalInfo(query, entry.get("iupac_name"), entry.get("molar_mass"), tuple(entry.get("synonyms", ())))

    def _fetch(self, name: str) -> Optional[dict]:
        import httpx

        http = self._http or httpx.Client(timeout=20.0)
        url = f"{self.base_url}/compound/name/{quote(name, safe='')}/property/IUPACName,MolecularWeight/JSON"
        for attempt in range(self.retries + 1):
            self.network_calls += 1
            try:
                resp = http.get(url)
            except httpx.TransportError as exc:
                logger.warning("chemical lookup for %r failed (%s), attempt %d", name, exc, attempt + 1)
                continue
            if resp.status_code == 404:
                return None
            if resp.status_code >= 500:
                continue
            resp.raise_for_status()
            props = resp.json()["PropertyTable"]["Properties"][0]
            return {"iupac_name": props.get("IUPACName"), "molar_mass": float(props["MolecularWeight"]), "synonyms": []}
        return None

    def lookup(self, name: str) -> Optional[ChemicalInfo]:
        key = _fold(name)
        entry = self._entries.get(key)
        if entry is not None:
            return self._info(name, entry)
        if self.live:
            entry = self._fetch(name)
            if entry is not None:
                self._entries[key] = entry
                self._save(key, entry)
                return self._info(name, entry)
        self.misses.append(name)
        return None

    def _save(self, key: str, entry: dict) -> None:
        if self.cache_path is None:
            return
        data = {"version": 1, "compounds": {}}
        if self.cache_path.exists():
            data = json.loads(self.cache_path.read_text(encoding="utf-8"))
        data.setdefault("compounds", {})[key] = entry
        self.cache_path.write_text(json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8")


def lookup_chemical(name: str, client: ChemicalClient) -> Optional[ChemicalInfo]:
    """IUPAC name and molar mass for ``name``; None when not found."""
    return client.lookup(name)


def amount_to_mass(amount: Union[float, str, Decimal], molar_mass: Union[float, str, Decimal]) -> Decimal:
    """Mass in g of ``amount`` mmol of a compound of ``molar_mass`` g/mol,
    rounded to 4 significant figures."""
    a = Decimal(str(amount))
    m = Decimal(str(molar_mass))
    if a <= 0 or m <= 0:
        raise ValueError("amount and molar mass must both be positive")
    mass = a * m / Decimal(1000)
    exponent = mass.adjusted() - 3
    rounded = mass.quantize(Decimal(1).scaleb(exponent), rounding=ROUND_HALF_UP)
    if rounded.adjusted() > mass.adjusted():  # carried into the next decade, e.g. 0.99995 -> 1.000
        rounded = mass.quantize(Decimal(1).scaleb(exponent + 1), rounding=ROUND_HALF_UP)
    return rounded


# solvents ------------------------------------------------------------------------


class SolventTable:
    def __init__(self, rows: list[tuple[str, list[str], float]]):
        self.rows = rows
        self._index: dict[str, tuple[str, float]] = {}
        for name, synonyms, bp in rows:
            for alias in [name, *synonyms]:
                self._index[_fold(alias)] = (name, bp)

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "SolventTable":
        if path is None:
            text = resources.files("xdlforge").joinpath("data/solvents.csv").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        rows = []
        for rec in csv.DictReader(text.splitlines()):
            synonyms = [s.strip() for s in rec["synonyms"].split(";") if s.strip()]
            rows.append((rec["name"], synonyms, float(rec["bp_c"])))
        return cls(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def canonical(self, name: str) -> Optional[str]:
        hit = self._index.get(_fold(name))
        return hit[0] if hit else None

    def bp(self, name: str) -> Optional[float]:
        hit = self._index.get(_fold(name))
        return hit[1] if hit else None

    def find_in(self, text: str) -> list[str]:
        """Canonical names of solvents mentioned in ``text``, in order of
        first mention."""
        found: list[tuple[int, str]] = []
        for alias, (name, _) in self._index.items():
            m = re.search(rf"(?<![\w-]){re.escape(alias)}(?![\w-])", text, re.IGNORECASE)
            if m:
                found.append((m.start(), name))
        out: list[str] = []
        for _, name in sorted(found):
            if name not in out:
                out.append(name)
        return out


@lru_cache(maxsize=1)
def default_solvents() -> SolventTable:
    return SolventTable.load()


def solvent_bp(name: str, table: Optional[SolventTable] = None) -> Optional[float]:
    """Boiling point (°C, ambient pressure) of a solvent or synonym."""
    return (table or default_solvents()).bp(name)


# ambiguities ---------------------------------------------------------------------


@dataclass(frozen=True)
class Resolution:
    fragment: str
    explanation: str
    source: str  # annotated_seed | expert_answer
    similarity: float = 1.0


@dataclass(frozen=True)
class Question:
    fragment: str
    question: str


@lru_cache(maxsize=1)
def ambiguity_markers() -> tuple[str, ...]:
    text = resources.files("xdlforge").joinpath("data/ambiguity_markers.txt").read_text(encoding="utf-8")
    return tuple(line.strip().casefold() for line in text.splitlines() if line.strip() and not line.startswith("#"))


def split_sentences(text: str) -> list[str]:
    """Sentences as verbatim substrings of ``text`` (whitespace-trimmed)."""
    out = []
    for m in re.finditer(r"[^.!?\n]+(?:[.!?]+|$)", text, re.MULTILINE):
        s = m.group(0).strip()
        if len(s) > 1 and re.search(r"\w", s):
            out.append(s)
    return out


def flag_markers(sentence: str) -> list[str]:
    low = sentence.casefold()
    return [mk for mk in ambiguity_markers() if re.search(rf"(?<!\w){re.escape(mk)}(?!\w)", low)]


def resolve_ambiguities(
    procedure: str,
    store: Optional[VectorStore],
    gateway,
    ask_fn: Optional[AskFn] = None,
    threshold: float = CAD_THRESHOLD,
    k: int = 1,
) -> tuple[list[Resolution], list[Question]]:
    """Attach Chemical Ambiguity Database entries to the procedure's
    sentences; route flagged sentences without a match to ``ask_fn``.

    Returns ``(resolutions, open_questions)``.  Expert answers are stored
    so the next run resolves the same fragment without asking.
    """
    resolutions: list[Resolution] = []
    questions: list[Question] = []
    sentences = split_sentences(procedure)
    if not sentences:
        return resolutions, questions
    have_cad = store is not None and store.count("ambiguities") > 0
    vectors = gateway.embed(sentences, store.dim("ambiguities")) if have_cad else [None] * len(sentences)
    for sentence, vec in zip(sentences, vectors):
        matched = False
        if have_cad:
            for hit in store.query(vec, k, "ambiguities"):
                if hit.score >= threshold:
                    resolutions.append(
                        Resolution(sentence, hit.record.metadata["explanation"], hit.record.metadata.get("source", "annotated_seed"), round(hit.score, 6))
                    )
                    matched = True
        if matched:
            continue
        markers = flag_markers(sentence)
        if not markers:
            continue
        q = Question(sentence, f"What exactly is meant by {', '.join(repr(m) for m in markers)} here?")
        answer = ask_fn(q.fragment, q.question) if ask_fn is not None else None
        if answer and answer.strip():
            resolutions.append(Resolution(sentence, answer.strip(), "expert_answer"))
            if store is not None:
                add_ambiguity(store, gateway, AmbiguityEntry(sentence, answer.strip(), "expert_answer"))
                have_cad = True
        else:
            questions.append(q)
            logger.info("unresolved ambiguity: %s", sentence)
    return resolutions, questions


# sanitisation ----------------------------------------------------------------------


@dataclass
class ChemicalRecord:
    name: str
    iupac_name: Optional[str] = None
    molar_mass: Optional[float] = None
    boiling_point: Optional[float] = None
    role: str = ""


@dataclass
class SanitizedProcedure:
    original: str
    sanitized: str
    category: str
    title: str = ""
    resolutions: list = field(default_factory=list)
    chemicals: list = field(default_factory=list)
    questions: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}, got {self.category!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SanitizedProcedure":
        return cls(
            original=d["original"],
            sanitized=d["sanitized"],
            category=d["category"],
            title=d.get("title", ""),
            resolutions=[Resolution(**r) for r in d.get("resolutions", [])],
            chemicals=[ChemicalRecord(**c) for c in d.get("chemicals", [])],
            questions=[Question(**q) for q in d.get("questions", [])],
            notes=list(d.get("notes", [])),
        )


def _chemical_names(procedure: str, title: str, kg, client: Optional[ChemicalClient], solvents: SolventTable) -> list[str]:
    names: list[str] = []
    if kg is not None and title:
        node = kg.procedure(title)
        if node is not None:
            names += [n.attrs.get("name", n.id) for n in kg.neighbours(node.id, "uses_chemical")]
    for s in solvents.find_in(procedure):
        if s not in names:
            names.append(s)
    if client is not None:
        low = procedure.casefold()
        for key in client.names():
            if len(key) > 3 and re.search(rf"(?<![\w-]){re.escape(key)}(?![\w-])", low):
                if not any(_fold(n) == key for n in names):
                    names.append(key)
    return names


def sanitize(
    procedure: str,
    gateway,
    store: Optional[VectorStore] = None,
    title: str = "",
    kg=None,
    ask_fn: Optional[AskFn] = None,
    client: Optional[ChemicalClient] = None,
    solvents: Optional[SolventTable] = None,
    use_cad: bool = True,
    use_chem_data: bool = True,
    use_doc_db: bool = True,
    model: str = "default",
) -> SanitizedProcedure:
    """Resolve ambiguities and categorise ``procedure`` via the procedure
    agent.  Always returns exactly one of the three categories; malformed
    agent output degrades to ``incomplete``."""
    solvents = solvents or default_solvents()
    if use_cad:
        resolutions, questions = resolve_ambiguities(procedure, store, gateway, ask_fn)
    else:
        resolutions, questions = [], []

    chemicals: list[ChemicalRecord] = []
    if use_chem_data:
        client = client or ChemicalClient()
        for name in _chemical_names(procedure, title, kg, client, solvents):
            info = lookup_chemical(name, client)
            chemicals.append(
                ChemicalRecord(
                    name=name,
                    iupac_name=info.iupac_name if info else None,
                    molar_mass=info.molar_mass if info else None,
                    boiling_point=solvents.bp(name),
                )
            )

    documents = []
    if use_doc_db and store is not None and store.count("documents") and _BLUEPRINT_RE.search(procedure):
        vec = gateway.embed_one(procedure, store.dim("documents"))
        documents = [h.record.text for h in store.query(vec, 2, "documents")]

    chem_lines = [
        f"- {c.name}: IUPAC {c.iupac_name or 'unknown'}, molar mass {c.molar_mass if c.molar_mass else 'unknown'} g/mol"
        for c in chemicals
    ]
    solvent_lines = [f"- {c.name}: boiling point {c.boiling_point} °C (reflux temperature)" for c in chemicals if c.boiling_point is not None]
    system, user = render(
        "sanitize",
        title=title or "(untitled)",
        procedure=procedure,
        resolutions="\n".join(f"- \"{r.fragment}\": {r.explanation}" for r in resolutions) or "none",
        chemicals="\n".join(chem_lines) or "none",
        solvents="\n".join(solvent_lines) or "none",
        documents="\n---\n".join(documents) or "none",
    )
    reply = gateway.chat(ChatRequest(system, user, model=model, agent="procedure"))
    notes = [f"open question: {q.fragment}" for q in questions]
    try:
        data = extract_json(reply)
        category = data.get("category")
        sanitized_text = data.get("sanitized_text")
        if category not in CATEGORIES or not isinstance(sanitized_text, str):
            raise ValueError(f"bad category/sanitized_text in reply: {category!r}")
        roles = {_fold(c.get("name", "")): c.get("role", "") for c in data.get("chemicals", []) if isinstance(c, dict)}
        notes += [str(n) for n in data.get("notes", [])]
    except (ValueError, AttributeError) as exc:
        logger.warning("procedure agent reply unusable (%s); marking incomplete", exc)
        category, sanitized_text, roles = "incomplete", procedure, {}
        notes.append(f"agent reply unusable: {exc}")
    for c in chemicals:
        c.role = roles.get(_fold(c.name), c.role)
    known = {_fold(c.name) for c in chemicals}
    for name, role in roles.items():
        if name and name not in known:
            chemicals.append(ChemicalRecord(name=name, boiling_point=solvents.bp(name), role=role))
    if category == "executable" and has_placeholder(sanitized_text):
        category = "incomplete"
        notes.append("executable reply still contains placeholders; recategorised as incomplete")
    return SanitizedProcedure(
        original=procedure,
        sanitized=sanitized_text,
        category=category,
        title=title,
        resolutions=resolutions,
        chemicals=chemicals,
        questions=questions,
        notes=notes,
    )
