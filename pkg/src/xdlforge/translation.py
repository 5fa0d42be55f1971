"""XDL agent, critique agent and the three-stage repair loop.

Each iteration checks a candidate XDL document in three stages, stopping at
the first failing one:

1. parse + validate (no LLM),
2. critique agent comparing the procedure with the XDL,
3. hardware binding + simulation.

Findings from the failing stage become numbered feedback for the repair
prompt.  A session ends when all stages pass or the iteration budget is
spent.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

from .gaps import FlaggedStep, record_flagged
from .hardware import HardwareGraph, bind_hardware
from .llm import ChatRequest
from .memory import Labbook, LabbookEntry, VectorStore, XdlPair, add_xdl_pair, content_id
from .prompts import extract_json, render
from .sanitization import SanitizedProcedure
from .simulate import simulate
from .xdl import check_xdl, default_schema

logger = logging.getLogger(__name__)

VERDICTS = ("valid_and_simulated", "valid_only", "failed")
MAX_ITERATIONS = 6
RAG_K = 5
MAX_FINDINGS = 40
TRANSLATABLE = ("executable", "blueprint")

_XML_BLOCK_RE = re.compile(r"```xml[^\n]*\n(.*?)```", re.DOTALL | re.IGNORECASE)


class TranslationFailure(RuntimeError):
    pass


@dataclass
class PipelineConfig:
    max_iterations: int = MAX_ITERATIONS
    rag_k: int = RAG_K
    use_xdl_db: bool = True
    use_cad: bool = True
    use_chem_data: bool = True
    use_doc_db: bool = True
    abort_on_first: bool = False
    max_findings: int = MAX_FINDINGS
    organic_fraction: float = 0.5
    model: str = "default"
    vessel_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.rag_k < 0:
            raise ValueError("rag_k must not be negative")

    ABLATIONS = {"xdl_db": "use_xdl_db", "cad": "use_cad", "chem_data": "use_chem_data", "doc_db": "use_doc_db"}

    def ablate(self, *names: str) -> "PipelineConfig":
        values = asdict(self)
        for name in names:
            if name not in self.ABLATIONS:
                raise ValueError(f"unknown ablation {name!r}; choose from {sorted(self.ABLATIONS)}")
            values[self.ABLATIONS[name]] = False
        return PipelineConfig(**values)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# reports ---------------------------------------------------------------------


@dataclass
class NonExecutable:
    description: str
    reason: str = ""
    approximated: bool = False


@dataclass
class DiscrepancyReport:
    missing_steps: list = field(default_factory=list)
    misordered_steps: list = field(default_factory=list)
    wrong_parameters: list = field(default_factory=list)
    non_executable: list = field(default_factory=list)
    indeterminate: bool = False
    raw: str = ""

    @property
    def passed(self) -> bool:
        if self.indeterminate or self.missing_steps or self.misordered_steps or self.wrong_parameters:
            return False
        return all(n.approximated for n in self.non_executable)

    def findings(self) -> list[str]:
        if self.indeterminate:
            return [f"critique output could not be read: {self.raw.strip()[:500]}"]
        out = [f"missing step: {s}" for s in self.missing_steps]
        out += [f"misordered step: {s}" for s in self.misordered_steps]
        out += [f"wrong parameter: {s}" for s in self.wrong_parameters]
        out += [f"not executable: {n.description} ({n.reason})" for n in self.non_executable if not n.approximated]
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscrepancyReport":
        return cls(
            missing_steps=list(d.get("missing_steps", [])),
            misordered_steps=list(d.get("misordered_steps", [])),
            wrong_parameters=list(d.get("wrong_parameters", [])),
            non_executable=[NonExecutable(**n) for n in d.get("non_executable", [])],
            indeterminate=d.get("indeterminate", False),
            raw=d.get("raw", ""),
        )


def _parse_report(reply: str) -> DiscrepancyReport:
    data = extract_json(reply)
    if not isinstance(data, dict):
        raise ValueError("report is not a JSON object")
    lists = {}
    for key in ("missing_steps", "misordered_steps", "wrong_parameters"):
        value = data.get(key, [])
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ValueError(f"{key} must be a list of strings")
        lists[key] = value
    items = data.get("non_executable", [])
    if not isinstance(items, list):
        raise ValueError("non_executable must be a list")
    flagged = []
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("description"), str) or not item["description"].strip():
            raise ValueError("non_executable entries need a description")
        flagged.append(NonExecutable(item["description"], str(item.get("reason", "")), bool(item.get("approximated", False))))
    return DiscrepancyReport(non_executable=flagged, **lists)


@dataclass
class TranslationAttempt:
    iteration: int
    xdl: str
    stage1_errors: list = field(default_factory=list)
    stage2: Optional[DiscrepancyReport] = None
    stage3: Optional[dict] = None  # binding errors + simulation report
    feedback: str = ""

    @property
    def stage1_passed(self) -> bool:
        return not self.stage1_errors

    @property
    def stage2_passed(self) -> bool:
        return self.stage2 is not None and self.stage2.passed

    @property
    def stage3_passed(self) -> bool:
        return self.stage3 is not None and self.stage3["passed"]

    @property
    def passed(self) -> bool:
        return self.stage1_passed and self.stage2_passed and self.stage3_passed

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "xdl": self.xdl,
            "stage1_errors": list(self.stage1_errors),
            "stage2": self.stage2.to_dict() if self.stage2 else None,
            "stage3": self.stage3,
            "feedback": self.feedback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TranslationAttempt":
        return cls(
            iteration=d["iteration"],
            xdl=d["xdl"],
            stage1_errors=list(d.get("stage1_errors", [])),
            stage2=DiscrepancyReport.from_dict(d["stage2"]) if d.get("stage2") else None,
            stage3=d.get("stage3"),
            feedback=d.get("feedback", ""),
        )


@dataclass
class TranslationSession:
    id: str
    title: str
    attempts: list = field(default_factory=list)
    final_xdl: Optional[str] = None
    verdict: str = "failed"
    category: str = ""
    flagged: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.attempts)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "category": self.category,
            "verdict": self.verdict,
            "iterations": self.iterations,
            "final_xdl": self.final_xdl,
            "attempts": [a.to_dict() for a in self.attempts],
            "flagged": [f.to_dict() for f in self.flagged],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TranslationSession":
        return cls(
            id=d["id"],
            title=d["title"],
            attempts=[TranslationAttempt.from_dict(a) for a in d.get("attempts", [])],
            final_xdl=d.get("final_xdl"),
            verdict=d.get("verdict", "failed"),
            category=d.get("category", ""),
            flagged=[FlaggedStep.from_dict(f) for f in d.get("flagged", [])],
        )


# prompt pieces -------------------------------------------------------------------


def step_documentation(schema=None) -> str:
    schema = schema or default_schema()
    lines = []
    for name, spec in schema.steps.items():
        parts = []
        for attr in spec.attributes.values():
            desc = attr.name + ("*" if attr.required else "")
            if attr.kind == "quantity":
                desc += f" ({attr.dimension})"
            elif attr.choices:
                desc += f" ({'|'.join(attr.choices)})"
            elif attr.kind != "text":
                desc += f" ({attr.kind})"
            parts.append(desc)
        extra = "".join(f"; one of {'/'.join(g)} required" for g in spec.one_of)
        lines.append(f"- {name}: {', '.join(parts)}{extra}")
    lines.append("(* = required)")
    return "\n".join(lines)


def extract_xdl(reply: str) -> Optional[str]:
    """The last fenced xml block holding a complete document."""
    blocks = [b.strip() for b in _XML_BLOCK_RE.findall(reply)]
    complete = [b for b in blocks if "<Synthesis" in b and "</Synthesis>" in b]
    return complete[-1] + "\n" if complete else None


def number_lines(text: str) -> str:
    lines = text.splitlines()
    width = len(str(len(lines)))
    return "\n".join(f"{n:>{width}} | {line}" for n, line in enumerate(lines, 1))


def _resolution_lines(resolutions) -> str:
    return "\n".join(f"- \"{r.fragment}\": {r.explanation}" for r in resolutions) or "none"


def retrieve_examples(procedure: str, store: Optional[VectorStore], gateway, k: int = RAG_K) -> list[tuple[XdlPair, float]]:
    """Up to ``k`` validated pairs most similar to ``procedure``."""
    if store is None or k < 1 or store.count("xdl_pairs") == 0:
        return []
    vec = gateway.embed_one(procedure, store.dim("xdl_pairs"))
    hits = store.query(vec, k, "xdl_pairs", where={"validated": "true"})
    return [(XdlPair.from_record(h.record), h.score) for h in hits]


def _ask_for_xdl(gateway, system: str, user: str, model: str, agent: str) -> str:
    reply = gateway.chat(ChatRequest(system, user, model=model, agent=agent))
    xdl = extract_xdl(reply)
    if xdl is not None:
        return xdl
    system, user = render("translate_retry", previous=reply)
    reply = gateway.chat(ChatRequest(system, user, model=model, agent=agent))
    xdl = extract_xdl(reply)
    if xdl is None:
        raise TranslationFailure("agent reply holds no complete XDL document after a reprompt")
    return xdl


def translate(
    sanitized: SanitizedProcedure,
    store: Optional[VectorStore],
    gateway,
    config: Optional[PipelineConfig] = None,
) -> str:
    config = config or PipelineConfig()
    if sanitized.category not in TRANSLATABLE:
        raise ValueError(f"only {' or '.join(TRANSLATABLE)} procedures are translated, got {sanitized.category!r}")
    examples = retrieve_examples(sanitized.sanitized, store, gateway, config.rag_k) if config.use_xdl_db else []
    example_text = "\n\n".join(
        f"Example {n}: {p.title or 'untitled'}\nProcedure:\n{p.procedure_text}\nXDL:\n```xml\n{p.xdl_text.strip()}\n```"
        for n, (p, _) in enumerate(examples, 1)
    )
    system, user = render(
        "translate",
        steps=step_documentation(),
        title=sanitized.title or "(untitled)",
        procedure=sanitized.sanitized,
        resolutions=_resolution_lines(sanitized.resolutions) if config.use_cad else "none",
        example_count=len(examples),
        examples=example_text or "none",
    )
    return _ask_for_xdl(gateway, system, user, config.model, "xdl")


def critique(procedure: str, xdl: str, gateway, model: str = "default") -> DiscrepancyReport:
    system, user = render("critique", steps=step_documentation(), procedure=procedure, xdl=xdl)
    reply = gateway.chat(ChatRequest(system, user, model=model, agent="critique"))
    try:
        return _parse_report(reply)
    except ValueError as exc:
        system, user = render("critique_retry", error=str(exc), previous=reply)
        reply = gateway.chat(ChatRequest(system, user, model=model, agent="critique"))
        try:
            return _parse_report(reply)
        except ValueError as exc2:
            logger.warning("critique unreadable after reprompt: %s", exc2)
            return DiscrepancyReport(indeterminate=True, raw=reply)


def repair(xdl: str, feedback: str, gateway, model: str = "default") -> str:
    if not feedback.strip():
        raise ValueError("repair needs feedback")
    system, user = render("repair", steps=step_documentation(), feedback=feedback, numbered=number_lines(xdl))
    return _ask_for_xdl(gateway, system, user, model, "xdl")


def format_feedback(stage: int, findings: list[str], cap: int = MAX_FINDINGS) -> str:
    shown = findings[:cap]
    lines = [f"{n}. [stage {stage}] {f}" for n, f in enumerate(shown, 1)]
    if len(findings) > cap:
        lines.append(f"({len(findings) - cap} further findings omitted)")
    return "\n".join(lines)


# the loop ----------------------------------------------------------------------------


def _evaluate(attempt: TranslationAttempt, procedure: str, graph: HardwareGraph, gateway, config: PipelineConfig) -> list[str]:
    """Run the stages in order; return the findings of the first failure."""
    doc, errors = check_xdl(attempt.xdl)
    attempt.stage1_errors = [str(e) for e in errors]
    if doc is None and not errors:
        attempt.stage1_errors = ["MalformedXml: no document"]
    if attempt.stage1_errors:
        return attempt.stage1_errors
    attempt.stage2 = critique(procedure, attempt.xdl, gateway, config.model)
    if not attempt.stage2.passed:
        return attempt.stage2.findings()
    binding, bind_errors = bind_hardware(doc, graph, overrides=config.vessel_overrides or None)
    findings = [str(e) for e in bind_errors]
    stage3 = {"binding": binding.to_dict(), "binding_errors": [e.to_dict() for e in bind_errors], "simulation": None}
    if not bind_errors:
        report = simulate(doc, graph, binding, abort_on_first=config.abort_on_first, organic_fraction=config.organic_fraction)
        stage3["simulation"] = {"verdict": report.verdict, "errors": [asdict(e) for e in report.errors]}
        findings += [str(e) for e in report.errors]
    stage3["passed"] = not findings
    attempt.stage3 = stage3
    return findings


def labbook_entry(sanitized: SanitizedProcedure, session: TranslationSession, document: str = "") -> LabbookEntry:
    return LabbookEntry(
        document=document,
        title=sanitized.title,
        raw_procedure=sanitized.original,
        sanitized_procedure=sanitized.sanitized,
        category=sanitized.category,
        resolutions=[asdict(r) for r in sanitized.resolutions],
        final_xdl=session.final_xdl,
        validation={"verdict": session.verdict, "iterations": session.iterations},
        session=session.to_dict(),
    )


def run_pipeline(
    sanitized: SanitizedProcedure,
    graph: HardwareGraph,
    store: Optional[VectorStore],
    gateway,
    config: Optional[PipelineConfig] = None,
    labbook: Optional[Labbook] = None,
    kg=None,
    document: str = "",
) -> TranslationSession:
    """Translate, check and repair until every stage passes or the iteration
    budget runs out.  Gateway and storage failures propagate; translation
    outcomes are carried by the session verdict."""
    config = config or PipelineConfig()
    session = TranslationSession(
        id=content_id("session", document, sanitized.title, sanitized.sanitized),
        title=sanitized.title,
        category=sanitized.category,
    )
    flagged: list[FlaggedStep] = []
    if sanitized.category in TRANSLATABLE:
        xdl: Optional[str] = None
        feedback = ""
        for iteration in range(1, config.max_iterations + 1):
            try:
                xdl = translate(sanitized, store, gateway, config) if xdl is None else repair(xdl, feedback, gateway, config.model)
            except TranslationFailure as exc:
                attempt = TranslationAttempt(iteration, xdl or "", [f"no XDL document: {exc}"])
                attempt.feedback = format_feedback(1, attempt.stage1_errors, config.max_findings)
                session.attempts.append(attempt)
                feedback = attempt.feedback
                continue
            attempt = TranslationAttempt(iteration, xdl)
            findings = _evaluate(attempt, sanitized.sanitized, graph, gateway, config)
            if attempt.stage2 is not None:
                for n in attempt.stage2.non_executable:
                    flagged.append(FlaggedStep(n.description, n.reason, sanitized.title, session.id, n.approximated))
            session.attempts.append(attempt)
            if attempt.passed:
                break
            stage = 1 if not attempt.stage1_passed else 2 if not attempt.stage2_passed else 3
            attempt.feedback = feedback = format_feedback(stage, findings, config.max_findings)
            logger.info("%s: iteration %d failed stage %d with %d findings", sanitized.title, iteration, stage, len(findings))
    else:
        logger.info("%s: category %s is not translated", sanitized.title, sanitized.category)

    passed = [a for a in session.attempts if a.passed]
    valid = [a for a in session.attempts if a.xdl and a.stage1_passed]
    if passed:
        session.verdict, session.final_xdl = "valid_and_simulated", passed[-1].xdl
    elif valid:
        session.verdict, session.final_xdl = "valid_only", valid[-1].xdl
    seen = set()
    session.flagged = [f for f in flagged if not (f.key in seen or seen.add(f.key))]

    if store is not None:
        if session.verdict == "valid_and_simulated":
            add_xdl_pair(
                store,
                gateway,
                XdlPair(sanitized.sanitized, session.final_xdl, "pipeline", True, sanitized.title, sanitized.category),
            )
        if session.flagged:
            record_flagged(store, gateway, session.flagged)
    if kg is not None and kg.procedure(sanitized.title) is not None:
        kg.link_translation(sanitized.title, session.id, session.verdict)
    if labbook is not None:
        labbook.append(labbook_entry(sanitized, session, document))
    return session
