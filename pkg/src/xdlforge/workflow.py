"""Document-level orchestration: extract, sanitize and translate every
procedure of one document.  Shared by the CLI and the demo scripts."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .extraction import KnowledgeGraph, index_document, scrape_document
from .hardware import HardwareGraph
from .memory import Labbook, VectorStore
from .sanitization import AskFn, ChemicalClient, SanitizedProcedure, sanitize
from .translation import PipelineConfig, TranslationSession, labbook_entry, run_pipeline

logger = logging.getLogger(__name__)


@dataclass
class ProcedureResult:
    title: str
    sanitized: SanitizedProcedure
    session: TranslationSession

    def summary(self) -> dict:
        return {
            "title": self.title,
            "category": self.sanitized.category,
            "verdict": self.session.verdict,
            "iterations": self.session.iterations,
        }


@dataclass
class DocumentRun:
    kg: KnowledgeGraph
    results: list = field(default_factory=list)


def single_procedure_graph(text: str, document_id: str, title: str) -> KnowledgeGraph:
    kg = KnowledgeGraph(document_id)
    kg.add_node(kg.document_node, "Document", title=title)
    kg.add_node(f"proc:{title}", "Procedure", title=title, text=text, chunk=0)
    kg.add_edge(kg.document_node, "contains", f"proc:{title}")
    return kg


def run_document(
    text: str,
    gateway,
    store: Optional[VectorStore],
    graph: HardwareGraph,
    config: Optional[PipelineConfig] = None,
    labbook: Optional[Labbook] = None,
    document_id: str = "document",
    title: str = "",
    ask_fn: Optional[AskFn] = None,
    client: Optional[ChemicalClient] = None,
    single_procedure: bool = False,
    jobs: int = 1,
) -> DocumentRun:
    """Extract (or take ``text`` as one procedure), then sanitize and
    translate each procedure.  Sessions may run in parallel with ``jobs``;
    labbook entries and graph links are written afterwards in procedure
    order so output does not depend on scheduling."""
    config = config or PipelineConfig()
    if single_procedure:
        kg = single_procedure_graph(text, document_id, title or document_id)
        if store is not None and config.use_doc_db:
            index_document(text, gateway, store, kg)
    else:
        kg = scrape_document(text, gateway, store if config.use_doc_db else None, document_id=document_id, title=title, model=config.model)
    procedures = kg.procedures()
    if client is None and config.use_chem_data:
        client = ChemicalClient()

    def one(node) -> ProcedureResult:
        sanitized = sanitize(
            node.attrs["text"],
            gateway,
            store,
            title=node.attrs["title"],
            kg=kg,
            ask_fn=ask_fn,
            client=client,
            use_cad=config.use_cad,
            use_chem_data=config.use_chem_data,
            use_doc_db=config.use_doc_db,
            model=config.model,
        )
        session = run_pipeline(sanitized, graph, store, gateway, config, document=document_id)
        logger.info("%s: %s after %d iterations", node.attrs["title"], session.verdict, session.iterations)
        return ProcedureResult(node.attrs["title"], sanitized, session)

    if jobs > 1 and len(procedures) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, procedures))
    else:
        results = [one(p) for p in procedures]

    for r in results:
        kg.link_translation(r.title, r.session.id, r.session.verdict)
        if labbook is not None:
            labbook.append(labbook_entry(r.sanitized, r.session, document_id))
    return DocumentRun(kg, results)
