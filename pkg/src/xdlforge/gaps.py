"""Gap mining: turn steps the step vocabulary cannot express into a ranked
feature roadmap, and count keywords over procedure corpora."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .llm import ChatRequest
from .memory import VectorRecord, VectorStore, content_id
from .prompts import extract_json, render

logger = logging.getLogger(__name__)

FEATURE_CATEGORIES = ("new_attribute", "new_step", "new_step_and_hardware")
CATEGORY_TITLES = {
    "new_attribute": "New attributes on existing steps",
    "new_step": "New steps",
    "new_step_and_hardware": "New steps with hardware support",
}
DEFAULT_THRESHOLD = 0.45
DEFAULT_RANK = 5
MAX_PROMPT_MEMBERS = 12


@dataclass(frozen=True)
class FlaggedStep:
    description: str
    reason: str = ""
    source: str = ""
    session_id: str = ""
    approximated: bool = False

    def __post_init__(self):
        if not self.description.strip():
            raise ValueError("flagged step needs a description")

    @property
    def key(self) -> tuple[str, str]:
        return (self.description, self.source)

    @property
    def id(self) -> str:
        return content_id("flag", self.description, self.source)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FlaggedStep":
        return cls(
            description=d["description"],
            reason=d.get("reason", ""),
            source=d.get("source", ""),
            session_id=d.get("session_id", ""),
            approximated=bool(d.get("approximated", False)),
        )


def dedupe(steps: Iterable[FlaggedStep]) -> list[FlaggedStep]:
    """First occurrence of every (description, source) pair, in order."""
    seen: set = set()
    out = []
    for s in steps:
        if s.key not in seen:
            seen.add(s.key)
            out.append(s)
    return out


# flagged-step storage ----------------------------------------------------------


def record_flagged(store: VectorStore, gateway, steps: Sequence[FlaggedStep]) -> list[str]:
    steps = [s for s in dedupe(steps) if store.get("flagged_steps", s.id) is None]
    if not steps:
        return []
    vectors = gateway.embed([s.description for s in steps], store.dim("flagged_steps"))
    records = []
    for s, vec in zip(steps, vectors):
        meta = {
            "reason": s.reason,
            "source": s.source,
            "session_id": s.session_id,
            "approximated": "true" if s.approximated else "false",
        }
        records.append(VectorRecord(s.id, "flagged_steps", s.description, vec, meta))
    return store.upsert_many(records)


def flagged_from_store(store: VectorStore) -> list[FlaggedStep]:
    out = []
    for r in store.records("flagged_steps"):
        m = r.metadata
        out.append(FlaggedStep(r.text, m.get("reason", ""), m.get("source", ""), m.get("session_id", ""), m.get("approximated") == "true"))
    return out


def export_flagged(steps: Iterable[FlaggedStep], path: Union[str, Path]) -> int:
    steps = list(steps)
    with open(path, "w", encoding="utf-8") as fh:
        for s in steps:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    return len(steps)


def import_flagged(path: Union[str, Path]) -> list[FlaggedStep]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(FlaggedStep.from_dict(json.loads(line)))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{n}: bad flagged step: {exc}") from None
    return dedupe(out)


# clustering --------------------------------------------------------------------


def cosine_distances(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x / safe[:, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    d = 1.0 - sim
    zero = norms == 0
    d[zero, :] = 1.0
    d[:, zero] = 1.0
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def average_linkage(vectors, threshold: float) -> list[list[int]]:
    """Agglomerative clustering with average linkage on cosine distance.

    The closest pair of clusters is merged while its distance is below
    ``threshold``.  Ties go to the pair with the smallest indices, so the
    result depends only on the input order.  Clusters come back as sorted
    index lists ordered by their first member.
    """
    n = len(vectors)
    if n == 0:
        return []
    dist = cosine_distances(vectors)
    np.fill_diagonal(dist, np.inf)
    sizes = np.ones(n)
    members = {i: [i] for i in range(n)}
    active = np.ones(n, dtype=bool)
    while len(members) > 1:
        masked = np.where(active[:, None] & active[None, :], dist, np.inf)
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        if not masked[i, j] < threshold:
            break
        i, j = min(i, j), max(i, j)
        # Lance-Williams update for average linkage
        merged = (sizes[i] * dist[i] + sizes[j] * dist[j]) / (sizes[i] + sizes[j])
        dist[i, :] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        dist[j, :] = np.inf
        dist[:, j] = np.inf
        sizes[i] += sizes[j]
        active[j] = False
        members[i] = sorted(members[i] + members.pop(j))
    return sorted(members.values(), key=lambda m: m[0])


@dataclass
class Cluster:
    members: list

    @property
    def size(self) -> int:
        return len(self.members)


def cluster_flagged(steps: Sequence[FlaggedStep], gateway, threshold: float = DEFAULT_THRESHOLD) -> list[Cluster]:
    if not steps:
        raise ValueError("nothing to cluster")
    vectors = gateway.embed([s.description for s in steps])
    return [Cluster([steps[i] for i in group]) for group in average_linkage(vectors, threshold)]


# categorisation ------------------------------------------------------------------


@dataclass
class FeatureSuggestion:
    label: str
    category: str
    member_count: int
    examples: list = field(default_factory=list)
    urgency: int = DEFAULT_RANK
    ease: int = DEFAULT_RANK

    def __post_init__(self):
        if self.category not in FEATURE_CATEGORIES:
            raise ValueError(f"category must be one of {FEATURE_CATEGORIES}")
        if self.member_count < 1:
            raise ValueError("a suggestion covers at least one flagged step")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSuggestion":
        return cls(d["label"], d["category"], int(d["member_count"]), list(d.get("examples", [])), int(d.get("urgency", DEFAULT_RANK)), int(d.get("ease", DEFAULT_RANK)))


def _check_category_reply(reply: str) -> dict:
    data = extract_json(reply)
    label = data.get("label")
    if not isinstance(label, str) or not label.strip():
        raise ValueError("label missing")
    if data.get("category") not in FEATURE_CATEGORIES:
        raise ValueError(f"category {data.get('category')!r} not in {FEATURE_CATEGORIES}")
    for key in ("urgency", "ease"):
        value = data.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
            raise ValueError(f"{key} must be an integer from 1 to 5")
    return data


def categorize_clusters(clusters: Sequence[Cluster], gateway, model: str = "default") -> list[FeatureSuggestion]:
    if not clusters:
        raise ValueError("no clusters to categorise")
    out = []
    for cluster in clusters:
        descriptions = [s.description for s in cluster.members]
        members = "\n".join(f"- {d}" for d in descriptions[:MAX_PROMPT_MEMBERS])
        system, user = render("categorize", count=cluster.size, members=members)
        reply = gateway.chat(ChatRequest(system, user, model=model, agent="gap"))
        try:
            data = _check_category_reply(reply)
        except ValueError as exc:
            system, user = render("categorize_retry", error=str(exc), previous=reply, count=cluster.size, members=members)
            reply = gateway.chat(ChatRequest(system, user, model=model, agent="gap"))
            try:
                data = _check_category_reply(reply)
            except ValueError as exc2:
                logger.warning("cluster %r not categorised (%s); defaulting to new_step", descriptions[0], exc2)
                data = {"label": descriptions[0], "category": "new_step", "urgency": DEFAULT_RANK, "ease": DEFAULT_RANK}
        out.append(
            FeatureSuggestion(data["label"].strip(), data["category"], cluster.size, descriptions[:3], data["urgency"], data["ease"])
        )
    return out


def roadmap_report(suggestions: Sequence[FeatureSuggestion]) -> str:
    """Markdown roadmap: one section per category, entries ordered by
    urgency, then ease, then label."""
    if not suggestions:
        raise ValueError("no suggestions to report")
    total = sum(s.member_count for s in suggestions)
    lines = [
        "# Feature roadmap",
        "",
        f"{len(suggestions)} suggestions covering {total} flagged steps.",
    ]
    for category in FEATURE_CATEGORIES:
        group = sorted((s for s in suggestions if s.category == category), key=lambda s: (s.urgency, s.ease, s.label))
        if not group:
            continue
        lines += ["", f"## {CATEGORY_TITLES[category]}", "", "| # | Feature | Urgency | Ease | Steps | Example |", "|---|---|---|---|---|---|"]
        for n, s in enumerate(group, 1):
            example = (s.examples[0] if s.examples else "").replace("|", "\\|")
            lines.append(f"| {n} | {s.label.replace('|', chr(92) + '|')} | {s.urgency} | {s.ease} | {s.member_count} | {example} |")
    return "\n".join(lines) + "\n"


# keywords --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"[^\W_]+")


@lru_cache(maxsize=1)
def stopwords() -> frozenset:
    text = resources.files("xdlforge").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def tokenize(text: str) -> list[str]:
    stop = stopwords()
    return [t for t in _TOKEN_RE.findall(text.casefold()) if t not in stop and not t.isdigit()]


def keyword_frequency(corpus: Sequence[str], top_n: Optional[int] = None) -> list[tuple[str, int]]:
    """Most frequent keywords, count descending then alphabetical."""
    if not corpus:
        raise ValueError("corpus is empty")
    counts: Counter = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if top_n is None else ranked[:top_n]
