"""Run the shipped demo document through the whole pipeline offline.

Every language-model reply comes from the bundled transcript, so the
labbook written here is the same on every machine.

    python demos/replay_demo_paper.py [workdir]
"""
from __future__ import annotations

import json
import sys
import tempfile
from importlib import resources
from pathlib import Path

from xdlforge.gaps import categorize_clusters, cluster_flagged, flagged_from_store, roadmap_report
from xdlforge.hardware import load_graph
from xdlforge.llm import Gateway, ScriptedBackend
from xdlforge.memory import Labbook, add_ambiguity, load_ambiguities, load_pairs, open_store, seed_xdl_db
from xdlforge.translation import PipelineConfig
from xdlforge.workflow import run_document

DATA = resources.files("xdlforge").joinpath("data")


def main(workdir: Path) -> None:
    store = open_store(workdir / "store")
    gateway = Gateway(ScriptedBackend.from_file(str(DATA.joinpath("demo/demo_transcript.jsonl"))))
    seed_xdl_db(store, gateway, load_pairs(str(DATA.joinpath("demo/seed_pairs.jsonl"))))
    for entry in load_ambiguities(str(DATA.joinpath("demo/seed_ambiguities.jsonl"))):
        add_ambiguity(store, gateway, entry)

    graph = load_graph(DATA.joinpath("demo_graph.json").read_text(encoding="utf-8"))
    labbook = Labbook(workdir / "store" / "labbook.jsonl", epoch=0)
    paper = DATA.joinpath("demo/demo_paper.txt").read_text(encoding="utf-8")
    run = run_document(paper, gateway, store, graph, PipelineConfig(), labbook=labbook, document_id="demo_paper", title="demo_paper")

    print("knowledge graph:", json.dumps(run.kg.counts()))
    for result in run.results:
        session = result.session
        print(f"\n{result.title}: {session.verdict} after {session.iterations} iteration(s)")
        for attempt in session.attempts:
            first = attempt.feedback.splitlines()[0] if attempt.feedback else "no findings"
            print(f"  iteration {attempt.iteration}: {first}")
        for flag in session.flagged:
            print(f"  flagged: {flag.description} ({'approximated' if flag.approximated else 'not executable'})")

    suggestions = categorize_clusters(cluster_flagged(flagged_from_store(store), gateway), gateway)
    print()
    print(roadmap_report(suggestions))
    print(f"labbook: {labbook.path}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
