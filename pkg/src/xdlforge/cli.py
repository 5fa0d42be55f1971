"""Command-line entry point.

Exit codes everywhere: 0 clean, 1 domain findings, 2 infrastructure error
(unreadable input, storage failure, gateway failure).

Chat calls go to the live OpenAI-compatible endpoint only with ``--live``;
otherwise ``--transcript`` replays a recorded run, and without either any
chat call fails.  Embeddings come from the local hash embedder unless
``--live`` is given, so memory, validate and simulate commands never touch
the network.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

from . import __version__
from .gaps import (
    categorize_clusters,
    cluster_flagged,
    export_flagged,
    flagged_from_store,
    import_flagged,
    record_flagged,
    roadmap_report,
    DEFAULT_THRESHOLD,
)
from .hardware import GraphSchemaError, bind_hardware, graph_from_dict
from .llm import Gateway, GatewayError, LiveBackend, ScriptedBackend
from .memory import (
    NAMESPACES,
    Labbook,
    StorageError,
    add_ambiguity,
    load_ambiguities,
    load_pairs,
    open_store,
    seed_xdl_db,
)
from .sanitization import ChemicalClient, SanitizedProcedure, sanitize
from .simulate import simulate
from .translation import PipelineConfig, run_pipeline
from .workflow import run_document
from .xdl import check_xdl

logger = logging.getLogger("xdlforge")

EXIT_CLEAN, EXIT_FINDINGS, EXIT_INFRA = 0, 1, 2
DEFAULT_STORE = "xdlforge-store"


class InfraError(Exception):
    """Anything that should end the command with exit code 2."""


# shared helpers -----------------------------------------------------------------


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InfraError(f"cannot read {path}: {exc}") from None


def _emit(args, payload, text: Optional[str] = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        print(text)


def _demo_file(name: str) -> str:
    return str(resources.files("xdlforge").joinpath(f"data/{name}"))


def _load_graph(path: Optional[str]):
    text = _read_text(path or _demo_file("demo_graph.json"))
    try:
        return graph_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise InfraError(f"graph file is not JSON: {exc}") from None
    except GraphSchemaError as exc:
        raise InfraError(f"invalid hardware graph: {exc}") from None


def _gateway(args) -> Gateway:
    record = getattr(args, "record", None)
    if getattr(args, "live", False):
        try:
            backend = LiveBackend.from_env()
        except GatewayError as exc:
            raise InfraError(str(exc)) from None
    elif getattr(args, "transcript", None):
        try:
            backend = ScriptedBackend.from_file(args.transcript, mode=args.replay_mode)
        except (OSError, GatewayError) as exc:
            raise InfraError(f"cannot load transcript: {exc}") from None
    else:
        backend = ScriptedBackend()
    return Gateway(backend, record_path=record)


def _store(args):
    try:
        return open_store(args.store)
    except (OSError, StorageError) as exc:
        raise InfraError(f"cannot open store {args.store}: {exc}") from None


def _config(args) -> PipelineConfig:
    try:
        config = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
        if getattr(args, "max_iterations", None):
            config.max_iterations = args.max_iterations
        if getattr(args, "abort_on_first", False):
            config.abort_on_first = True
        return config.ablate(*(getattr(args, "ablate", None) or []))
    except (OSError, ValueError, TypeError) as exc:
        raise InfraError(f"bad configuration: {exc}") from None


def _ask_stdin(fragment: str, question: str) -> Optional[str]:
    print(f"\nAmbiguous: {fragment}\n{question}", file=sys.stderr)
    print("answer (empty to skip)> ", end="", file=sys.stderr, flush=True)
    line = sys.stdin.readline()
    return line.strip() or None


def _labbook(args) -> Labbook:
    path = args.labbook or str(Path(args.store) / "labbook.jsonl")
    return Labbook(path, epoch=args.epoch)


# commands --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    source = _read_text(args.xdl)
    graph = _load_graph(args.graph)
    doc, errors = check_xdl(source)
    findings = [{"stage": "xdl", **e.to_dict()} for e in errors]
    sim_report = None
    if doc is not None and not errors:
        binding, bind_errors = bind_hardware(doc, graph)
        findings += [{"stage": "binding", **e.to_dict()} for e in bind_errors]
        if not bind_errors:
            sim_report = simulate(doc, graph, binding, abort_on_first=args.abort_on_first)
            findings += [
                {"stage": "simulation", "code": e.kind, "step": e.step_index + 1, "message": e.message}
                for e in sim_report.errors
            ]
    payload = {"file": args.xdl, "clean": not findings, "findings": findings}
    lines = [f"{args.xdl}: {'clean' if not findings else f'{len(findings)} finding(s)'}"]
    for f in findings:
        where = f" line {f['line']}" if f.get("line") else f" step {f['step']}" if f.get("step") else ""
        lines.append(f"  [{f['stage']}] {f['code']}{where}: {f['message']}")
    _emit(args, payload, "\n".join(lines))
    return EXIT_CLEAN if not findings else EXIT_FINDINGS


def cmd_simulate(args) -> int:
    doc, errors = check_xdl(_read_text(args.xdl))
    if doc is None or errors:
        _emit(args, {"file": args.xdl, "errors": [e.to_dict() for e in errors]}, "\n".join(str(e) for e in errors))
        return EXIT_FINDINGS
    graph = _load_graph(args.graph)
    binding, bind_errors = bind_hardware(doc, graph)
    if bind_errors:
        _emit(args, {"file": args.xdl, "binding_errors": [e.to_dict() for e in bind_errors]}, "\n".join(map(str, bind_errors)))
        return EXIT_FINDINGS
    report = simulate(doc, graph, binding, abort_on_first=args.abort_on_first)
    lines = [f"{e.step_index + 1:>3}. {e.step:<16} {e.summary}" for e in report.events]
    lines += [f"ERROR {e}" for e in report.errors]
    lines.append(f"verdict: {report.verdict}")
    _emit(args, report.to_dict(), "\n".join(lines))
    return EXIT_CLEAN if report.passed else EXIT_FINDINGS


def cmd_extract(args) -> int:
    from .extraction import scrape_document

    text = _read_text(args.document)
    gateway = _gateway(args)
    store = None if args.no_index else _store(args)
    doc_id = args.document_id or Path(args.document).stem
    out = args.out or f"{doc_id}.kg.json"
    kg = scrape_document(text, gateway, store, document_id=doc_id, title=args.title or doc_id, out_path=out)
    _emit(args, {"kg": out, "counts": kg.counts()}, f"wrote {out}: " + ", ".join(f"{k} {v}" for k, v in kg.counts().items() if v))
    return EXIT_CLEAN


def cmd_sanitize(args) -> int:
    text = _read_text(args.procedure)
    config = _config(args)
    gateway = _gateway(args)
    store = _store(args)
    result = sanitize(
        text,
        gateway,
        store,
        title=args.title or Path(args.procedure).stem,
        ask_fn=_ask_stdin if args.ask else None,
        client=ChemicalClient() if config.use_chem_data else None,
        use_cad=config.use_cad,
        use_chem_data=config.use_chem_data,
        use_doc_db=config.use_doc_db,
    )
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
    _emit(args, result.to_dict(), f"category: {result.category}\n\n{result.sanitized}")
    return EXIT_CLEAN


def cmd_translate(args) -> int:
    try:
        data = json.loads(_read_text(args.sanitized))
        sanitized = SanitizedProcedure.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise InfraError(f"{args.sanitized} is not a sanitized procedure: {exc}") from None
    config = _config(args)
    session = run_pipeline(sanitized, _load_graph(args.graph), _store(args), _gateway(args), config, labbook=_labbook(args))
    if args.out:
        Path(args.out).write_text(session.to_json(), encoding="utf-8")
    if session.final_xdl and args.xdl_out:
        Path(args.xdl_out).write_text(session.final_xdl, encoding="utf-8")
    _emit(args, session.to_dict(), f"{session.title}: {session.verdict} after {session.iterations} iteration(s)")
    return EXIT_CLEAN if session.verdict == "valid_and_simulated" else EXIT_FINDINGS


def cmd_pipeline(args) -> int:
    text = _read_text(args.document)
    config = _config(args)
    gateway = _gateway(args)
    store = _store(args)
    doc_id = args.document_id or Path(args.document).stem
    run = run_document(
        text,
        gateway,
        store,
        _load_graph(args.graph),
        config,
        labbook=_labbook(args),
        document_id=doc_id,
        title=args.title or doc_id,
        ask_fn=_ask_stdin if args.ask else None,
        single_procedure=args.procedure,
        jobs=1 if args.ask else args.jobs,
    )
    if args.kg_out:
        run.kg.save(args.kg_out)
    if args.sessions_out:
        Path(args.sessions_out).write_text(
            json.dumps([r.session.to_dict() for r in run.results], indent=2, ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )
    rows = [r.summary() for r in run.results]
    width = max([len(r["title"]) for r in rows] + [9])
    table = [f"{'procedure':<{width}}  {'category':<11} {'verdict':<20} iterations"]
    table += [f"{r['title']:<{width}}  {r['category']:<11} {r['verdict']:<20} {r['iterations']}" for r in rows]
    _emit(args, {"document": doc_id, "procedures": rows}, "\n".join(table))
    return EXIT_CLEAN


def cmd_memory_seed(args) -> int:
    gateway = _gateway(args)
    store = _store(args)
    pairs_path = args.pairs or _demo_file("demo/seed_pairs.jsonl")
    cad_path = args.ambiguities or _demo_file("demo/seed_ambiguities.jsonl")
    try:
        pairs = load_pairs(pairs_path)
        entries = load_ambiguities(cad_path)
    except (OSError, ValueError, KeyError) as exc:
        raise InfraError(f"cannot read seed files: {exc}") from None
    inserted, errors = seed_xdl_db(store, gateway, pairs)
    before = store.count("ambiguities")
    for entry in entries:
        add_ambiguity(store, gateway, entry)
    added = store.count("ambiguities") - before
    _emit(
        args,
        {"xdl_pairs": inserted, "ambiguities": added, "errors": errors},
        "\n".join([f"xdl_pairs: {inserted} inserted", f"ambiguities: {added} inserted", *errors]),
    )
    return EXIT_FINDINGS if errors else EXIT_CLEAN


def cmd_memory_list(args) -> int:
    store = _store(args)
    names = [args.namespace] if args.namespace else store.namespaces()
    payload = {}
    lines = []
    for ns in names:
        records = store.records(ns)
        payload[ns] = [{"id": r.id, "text": r.text[:200], "metadata": r.metadata} for r in records] if args.namespace else len(records)
        if args.namespace:
            lines += [f"{r.id}  {r.text[:70].replace(chr(10), ' ')}" for r in records]
        else:
            lines.append(f"{ns:<14} {len(records)}")
    _emit(args, payload, "\n".join(lines) or "(empty)")
    return EXIT_CLEAN


def cmd_memory_query(args) -> int:
    store = _store(args)
    if args.namespace not in store.namespaces():
        raise InfraError(f"unknown namespace {args.namespace!r}")
    gateway = _gateway(args)
    vec = gateway.embed_one(args.text, store.dim(args.namespace))
    where = {"validated": "true"} if args.validated_only else None
    hits = store.query(vec, args.k, args.namespace, where=where)
    payload = [{"rank": h.rank, "score": h.score, "id": h.record.id, "text": h.record.text} for h in hits]
    _emit(args, payload, "\n".join(f"{h.rank}. {h.score:.4f}  {h.record.text[:80]}" for h in hits) or "(no hits)")
    return EXIT_CLEAN


def cmd_gaps_report(args) -> int:
    store = _store(args)
    steps = import_flagged(args.source) if args.source else flagged_from_store(store)
    if not steps:
        print("no flagged steps", file=sys.stderr)
        return EXIT_CLEAN
    gateway = _gateway(args)
    clusters = cluster_flagged(steps, gateway, args.threshold)
    suggestions = categorize_clusters(clusters, gateway)
    report = roadmap_report(suggestions)
    Path(args.out).write_text(report, encoding="utf-8")
    _emit(args, {"out": args.out, "suggestions": [s.to_dict() for s in suggestions]}, f"wrote {args.out}: {len(suggestions)} suggestions from {len(steps)} steps")
    return EXIT_CLEAN


def cmd_gaps_export(args) -> int:
    n = export_flagged(flagged_from_store(_store(args)), args.path)
    _emit(args, {"exported": n}, f"exported {n} flagged steps to {args.path}")
    return EXIT_CLEAN


def cmd_gaps_import(args) -> int:
    try:
        steps = import_flagged(args.path)
    except (OSError, ValueError) as exc:
        raise InfraError(str(exc)) from None
    ids = record_flagged(_store(args), _gateway(args), steps)
    _emit(args, {"imported": len(ids)}, f"imported {len(ids)} flagged steps")
    return EXIT_CLEAN


def cmd_graph_lint(args) -> int:
    try:
        data = json.loads(_read_text(args.graph_file))
    except json.JSONDecodeError as exc:
        _emit(args, {"errors": [f"not JSON: {exc}"]}, f"not JSON: {exc}")
        return EXIT_FINDINGS
    try:
        graph = graph_from_dict(data)
    except GraphSchemaError as exc:
        _emit(args, {"errors": exc.errors}, "\n".join(exc.errors))
        return EXIT_FINDINGS
    warnings = []
    parts = graph.components()
    if len(parts) > 1:
        warnings.append(f"graph has {len(parts)} disconnected parts")
    if not graph.of_class("waste"):
        warnings.append("no waste node: separations and washes cannot drain")
    _emit(args, {"nodes": len(graph), "warnings": warnings}, "\n".join([f"{len(graph)} nodes, ok", *warnings]))
    return EXIT_CLEAN


# parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--store", default=DEFAULT_STORE, help="vector store directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    llm = argparse.ArgumentParser(add_help=False)
    llm.add_argument("--transcript", help="replay chat responses from a JSON-lines transcript")
    llm.add_argument("--replay-mode", choices=("fingerprint", "order"), default="fingerprint")
    llm.add_argument("--record", help="append every exchange to this transcript file")
    llm.add_argument("--live", action="store_true", help="use the endpoint in LLM_BASE_URL")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--config", help="JSON pipeline configuration")
    run.add_argument("--ablate", action="append", choices=sorted(PipelineConfig.ABLATIONS), help="disable a data source (repeatable)")
    run.add_argument("--max-iterations", type=int)
    run.add_argument("--abort-on-first", action="store_true")
    run.add_argument("--graph", help="hardware graph JSON (default: shipped demo platform)")
    run.add_argument("--epoch", type=float, help="freeze labbook timestamps at this Unix time")
    run.add_argument("--labbook", help="labbook path (default: <store>/labbook.jsonl)")

    p = argparse.ArgumentParser(prog="xdlforge", description="Literature procedures to validated XDL.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", parents=[common, llm], help="extract a knowledge graph from a document")
    s.add_argument("document")
    s.add_argument("--out", help="knowledge graph output (default: <doc>.kg.json)")
    s.add_argument("--title")
    s.add_argument("--document-id")
    s.add_argument("--no-index", action="store_true", help="skip document indexing")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("sanitize", parents=[common, llm, run], help="resolve ambiguities and categorise one procedure")
    s.add_argument("procedure")
    s.add_argument("--title")
    s.add_argument("--ask", action="store_true", help="ask on stdin about unresolved ambiguities")
    s.add_argument("--out", help="write the sanitized procedure JSON here")
    s.set_defaults(func=cmd_sanitize)

    s = sub.add_parser("translate", parents=[common, llm, run], help="translate a sanitized procedure JSON")
    s.add_argument("sanitized")
    s.add_argument("--out", help="session JSON output")
    s.add_argument("--xdl-out", help="final XDL output")
    s.set_defaults(func=cmd_translate)

    for name, func, text in (("validate", cmd_validate, "check an XDL file without any LLM"), ("simulate", cmd_simulate, "simulate an XDL file")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("xdl")
        s.add_argument("--graph", help="hardware graph JSON (default: shipped demo platform)")
        s.add_argument("--abort-on-first", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("pipeline", parents=[common, llm, run], help="run every procedure of a document end to end")
    s.add_argument("document")
    s.add_argument("--procedure", action="store_true", help="treat the file as a single procedure (no extraction)")
    s.add_argument("--title")
    s.add_argument("--document-id")
    s.add_argument("--ask", action="store_true", help="ask on stdin about unresolved ambiguities")
    s.add_argument("--jobs", type=int, default=1, help="parallel procedure sessions")
    s.add_argument("--kg-out", help="write the knowledge graph here")
    s.add_argument("--sessions-out", help="write all session JSON here")
    s.set_defaults(func=cmd_pipeline)

    mem = sub.add_parser("memory", help="manage the vector stores").add_subparsers(dest="memory_command", required=True)
    s = mem.add_parser("seed", parents=[common, llm], help="load seed XDL pairs and ambiguity entries")
    s.add_argument("--pairs", help="JSON lines of {title, procedure, xdl}")
    s.add_argument("--ambiguities", help="JSON lines of {fragment, explanation}")
    s.set_defaults(func=cmd_memory_seed)
    s = mem.add_parser("list", parents=[common], help="list namespaces or records")
    s.add_argument("namespace", nargs="?", choices=NAMESPACES)
    s.set_defaults(func=cmd_memory_list)
    s = mem.add_parser("query", parents=[common, llm], help="similarity search")
    s.add_argument("namespace", choices=NAMESPACES)
    s.add_argument("text")
    s.add_argument("-k", type=int, default=5)
    s.add_argument("--validated-only", action="store_true")
    s.set_defaults(func=cmd_memory_query)

    gaps = sub.add_parser("gaps", help="feature gaps from non-executable steps").add_subparsers(dest="gaps_command", required=True)
    s = gaps.add_parser("report", parents=[common, llm], help="cluster flagged steps and write a roadmap")
    s.add_argument("--out", default="roadmap.md")
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--from", dest="source", help="read flagged steps from JSON lines instead of the store")
    s.set_defaults(func=cmd_gaps_report)
    s = gaps.add_parser("export", parents=[common], help="write flagged steps as JSON lines")
    s.add_argument("path")
    s.set_defaults(func=cmd_gaps_export)
    s = gaps.add_parser("import", parents=[common, llm], help="add flagged steps from JSON lines")
    s.add_argument("path")
    s.set_defaults(func=cmd_gaps_import)

    graph = sub.add_parser("graph", help="hardware graph tools").add_subparsers(dest="graph_command", required=True)
    s = graph.add_parser("lint", parents=[common], help="check a hardware graph file")
    s.add_argument("graph_file")
    s.set_defaults(func=cmd_graph_lint)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfraError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except GatewayError as exc:
        print(f"error: language model gateway: {exc}", file=sys.stderr)
    except (StorageError, OSError) as exc:
        print(f"error: storage: {exc}", file=sys.stderr)
    return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
