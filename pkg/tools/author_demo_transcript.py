"""Regenerate ``data/demo/demo_transcript.jsonl``.

The transcript is authored, not recorded from a live model: a scripted
responder plays every agent, and a recording gateway writes the exact
prompts the pipeline sends.  Replaying it with

    xdlforge memory seed --store S
    xdlforge pipeline data/demo/demo_paper.txt --store S --transcript T --epoch 0
    xdlforge gaps report --store S --transcript T

reproduces the run byte for byte.  Scripted outcome: procedure 1 fails
stage 1 once (undeclared rotavap), is repaired and passes at iteration 2
with the pH adjustment flagged as approximated; procedure 2 keeps an
unsupported chromatography step and fails after six iterations.
"""
from __future__ import annotations

import json
import sys
import tempfile
from importlib import resources
from pathlib import Path

from xdlforge.gaps import categorize_clusters, cluster_flagged, flagged_from_store
from xdlforge.hardware import graph_from_dict
from xdlforge.llm import FunctionBackend, Gateway, ScriptedBackend
from xdlforge.memory import add_ambiguity, load_ambiguities, load_pairs, open_store, seed_xdl_db
from xdlforge.prompts import agent_tag
from xdlforge.translation import PipelineConfig
from xdlforge.workflow import run_document

DATA = resources.files("xdlforge").joinpath("data")
TITLE_1 = "Methyl 4-nitrobenzoate (1)"
TITLE_2 = "4-Nitrobenzamide (2)"


def _paper() -> str:
    return DATA.joinpath("demo/demo_paper.txt").read_text(encoding="utf-8")


def _procedure(paper: str, start: str, end: str) -> str:
    body = paper[paper.index(start) :]
    return body[: body.index(end)].strip() if end else body.strip()


def extraction_reply(paper: str) -> str:
    text_1 = _procedure(paper, "4-Nitrobenzoic acid (1.67 g", " 1H NMR")
    text_2 = _procedure(paper, "Methyl 4-nitrobenzoate (1) (0.91 g", " MS (ESI)")
    payload = {
        "chemicals": [
            {"name": "4-nitrobenzoic acid", "synonyms": ["p-nitrobenzoic acid"]},
            {"name": "methanol", "abbreviations": ["MeOH"]},
            {"name": "sulfuric acid", "synonyms": ["concentrated sulfuric acid"], "abbreviations": ["H2SO4"]},
            {"name": "sodium bicarbonate solution", "synonyms": ["saturated aqueous sodium bicarbonate"], "abbreviations": ["NaHCO3"]},
            {"name": "ethyl acetate", "abbreviations": ["EtOAc"]},
            {"name": "water"},
            {"name": "methyl 4-nitrobenzoate", "synonyms": ["1"]},
            {"name": "ammonia in methanol", "synonyms": ["methanolic ammonia"]},
            {"name": "4-nitrobenzamide", "synonyms": ["2"]},
            {"name": "hexane"},
        ],
        "procedures": [
            {
                "title": TITLE_1,
                "text": text_1,
                "chemicals": ["4-nitrobenzoic acid", "methanol", "sulfuric acid", "sodium bicarbonate solution", "ethyl acetate", "water"],
            },
            {
                "title": TITLE_2,
                "text": text_2,
                "chemicals": ["methyl 4-nitrobenzoate", "ammonia in methanol", "ethyl acetate", "hexane"],
            },
        ],
        "purification": [
            {"procedure": TITLE_1, "technique": "extraction", "text": "extracted with ethyl acetate, washed with water, concentrated"},
            {"procedure": TITLE_2, "technique": "column chromatography", "text": "column chromatography (ethyl acetate/hexane 1:1)"},
        ],
        "analytical": [
            {"procedure": TITLE_1, "technique": "1H NMR", "text": "1H NMR (400 MHz, CDCl3) δ 8.28 (d, J = 8.8 Hz, 2H), 8.20 (d, J = 8.8 Hz, 2H), 3.97 (s, 3H)"},
            {"procedure": TITLE_1, "technique": "yield", "text": "1.70 g, 94%"},
            {"procedure": TITLE_2, "technique": "MS", "text": "MS (ESI) m/z 167 [M+H]+"},
            {"procedure": TITLE_2, "technique": "yield", "text": "0.71 g, 85%"},
        ],
        "notes": [{"text": "Reagents used as purchased; TLC on silica gel with UV detection."}],
    }
    return "```json\n" + json.dumps(payload, indent=1, ensure_ascii=False) + "\n```"


SANITIZED_1 = (
    "4-Nitrobenzoic acid (1.67 g) is dissolved in methanol (50 mL) in the reactor and stirred for 5 min. "
    "Stirring is started at 400 rpm and sulfuric acid (1 mL) is added over 5 min. "
    "The mixture is heated to 65 °C (boiling point of methanol) for 4 h and then cooled to 20 °C. "
    "Sodium bicarbonate solution (30 mL) is added over 10 min to bring the pH to 7 and the mixture is stirred for 15 min. "
    "Ethyl acetate (50 mL) is added, the mixture is transferred to the separator, stirred for 5 min and left to settle for 10 min. "
    "The phases are separated, the aqueous phase is extracted with ethyl acetate (25 mL) and the combined organic phases are washed with water (20 mL). "
    "The organic phase is concentrated at 40 °C and 200 mbar for 30 min, then at 20 mbar for 15 min, and the residue is dried at 40 °C for 1 h."
)
SANITIZED_2 = (
    "Methyl 4-nitrobenzoate (0.91 g) is stirred in ammonia in methanol (20 mL) at 20 °C for 16 h. "
    "The solvent is evaporated at 40 °C and the residue is purified by column chromatography (ethyl acetate/hexane 1:1)."
)


def sanitize_reply(user: str) -> str:
    if f"Procedure title: {TITLE_1}\n" in user:
        body = {
            "sanitized_text": SANITIZED_1,
            "category": "executable",
            "chemicals": [
                {"name": "4-nitrobenzoic acid", "role": "substrate"},
                {"name": "methanol", "role": "solvent"},
                {"name": "sulfuric acid", "role": "catalyst"},
                {"name": "sodium bicarbonate solution", "role": "base"},
                {"name": "ethyl acetate", "role": "extraction solvent"},
                {"name": "water", "role": "wash"},
            ],
            "notes": ["reflux resolved to 65 °C from the methanol boiling point", "pH adjustment written as a fixed volume of base"],
        }
    else:
        body = {
            "sanitized_text": SANITIZED_2,
            "category": "executable",
            "chemicals": [
                {"name": "methyl 4-nitrobenzoate", "role": "substrate"},
                {"name": "ammonia in methanol", "role": "reagent"},
            ],
            "notes": ["overnight resolved to 16 h"],
        }
    return json.dumps(body, ensure_ascii=False)


def xdl_1(declare_rotavap: bool) -> str:
    hardware = ['    <Component id="reactor" type="reactor"/>', '    <Component id="separator" type="separator"/>']
    if declare_rotavap:
        hardware.append('    <Component id="rotavap" type="rotavap"/>')
    steps = [
        '<Add reagent="4-nitrobenzoic acid" vessel="reactor" mass="1.67 g"/>',
        '<Dissolve vessel="reactor" solvent="methanol" volume="50 mL"/>',
        '<Stir vessel="reactor" time="5 min"/>',
        '<StartStir vessel="reactor" stir_speed="400 rpm"/>',
        '<Add reagent="sulfuric acid" vessel="reactor" volume="1 mL" time="5 min"/>',
        '<HeatChill vessel="reactor" temp="65 °C" time="4 h"/>',
        '<HeatChillToTemp vessel="reactor" temp="20 °C"/>',
        '<Add reagent="sodium bicarbonate solution" vessel="reactor" volume="30 mL" time="10 min"/>',
        '<Stir vessel="reactor" time="15 min"/>',
        '<StopStir vessel="reactor"/>',
        '<Add reagent="ethyl acetate" vessel="reactor" volume="50 mL"/>',
        '<Transfer from_vessel="reactor" to_vessel="separator" volume="131 mL"/>',
        '<Stir vessel="separator" time="5 min" stir_speed="600 rpm"/>',
        '<Wait time="10 min"/>',
        '<Separate purpose="extract" from_vessel="separator" separation_vessel="separator" to_vessel="rotavap"/>',
        '<Separate purpose="extract" from_vessel="separator" separation_vessel="separator" to_vessel="rotavap" solvent="ethyl acetate" solvent_volume="25 mL"/>',
        '<Separate purpose="wash" from_vessel="rotavap" separation_vessel="separator" to_vessel="rotavap" solvent="water" solvent_volume="20 mL"/>',
        '<Evaporate rotavap="rotavap" temp="40 °C" pressure="200 mbar" time="30 min"/>',
        '<Evaporate rotavap="rotavap" temp="40 °C" pressure="20 mbar" time="15 min"/>',
        '<Dry vessel="rotavap" temp="40 °C" time="1 h"/>',
    ]
    reagents = ["4-nitrobenzoic acid", "methanol", "sulfuric acid", "sodium bicarbonate solution", "ethyl acetate", "water"]
    lines = ["<Synthesis>", "  <Hardware>", *hardware, "  </Hardware>", "  <Reagents>"]
    lines += [f'    <Reagent name="{r}"/>' for r in reagents]
    lines += ["  </Reagents>", "  <Procedure>", *("    " + s for s in steps), "  </Procedure>", "</Synthesis>"]
    return "\n".join(lines) + "\n"


XDL_2 = """<Synthesis>
  <Hardware>
    <Component id="reactor" type="reactor"/>
    <Component id="rotavap" type="rotavap"/>
  </Hardware>
  <Reagents>
    <Reagent name="methyl 4-nitrobenzoate"/>
    <Reagent name="ammonia in methanol"/>
    <Reagent name="ethyl acetate"/>
  </Reagents>
  <Procedure>
    <Add reagent="methyl 4-nitrobenzoate" vessel="reactor" mass="0.91 g"/>
    <Add reagent="ammonia in methanol" vessel="reactor" volume="20 mL"/>
    <Stir vessel="reactor" time="16 h"/>
    <Transfer from_vessel="reactor" to_vessel="rotavap" volume="20 mL"/>
    <Evaporate rotavap="rotavap" temp="40 °C"/>
    <ColumnChromatography vessel="rotavap" eluent="ethyl acetate/hexane 1:1"/>
  </Procedure>
</Synthesis>
"""


def translate_reply(user: str) -> str:
    if f"Procedure title: {TITLE_1}\n" in user:
        return (
            "Chemicals: 4-nitrobenzoic acid (substrate), methanol (solvent), sulfuric acid (catalyst), "
            "sodium bicarbonate solution (base), ethyl acetate (extraction), water (wash).\n"
            "Thought: dissolve the acid, add the catalyst slowly, heat, neutralise, extract and concentrate.\n"
            "Action: combine 20 steps.\n```xml\n" + xdl_1(declare_rotavap=False) + "```"
        )
    return (
        "Chemicals: methyl 4-nitrobenzoate (substrate), ammonia in methanol (reagent).\n"
        "Thought: stir with ammonia, evaporate, then chromatograph.\n```xml\n" + XDL_2 + "```"
    )


def repair_reply(user: str) -> str:
    if "ColumnChromatography" in user:
        return "Mapping: the chromatography step is required by the procedure; keeping it.\n```xml\n" + XDL_2 + "```"
    return (
        "Mapping: every UndeclaredVessel error points at steps using 'rotavap', which is missing from <Hardware>.\n"
        "Fix: declare the rotavap.\n```xml\n" + xdl_1(declare_rotavap=True) + "```"
    )


CRITIQUE_1 = {
    "missing_steps": [],
    "misordered_steps": [],
    "wrong_parameters": [],
    "non_executable": [
        {
            "description": "adjust the pH to 7 with saturated aqueous sodium bicarbonate",
            "reason": "no pH adjustment step; written as a fixed volume of base",
            "approximated": True,
        },
        {
            "description": "add concentrated sulfuric acid dropwise",
            "reason": "no dropwise addition; written as a timed addition",
            "approximated": True,
        },
    ],
}


def gap_reply(user: str) -> str:
    if "pH" in user:
        body = {"label": "pH adjustment to a target value", "category": "new_step_and_hardware", "urgency": 1, "ease": 3}
    else:
        body = {"label": "Dropwise addition rate", "category": "new_attribute", "urgency": 2, "ease": 1}
    return json.dumps(body)


def responder(request) -> str:
    agent = agent_tag(request.system)
    if agent == "scraping":
        return extraction_reply(_paper())
    if agent == "procedure":
        return sanitize_reply(request.user)
    if agent == "xdl":
        return translate_reply(request.user)
    if agent == "xdl-repair":
        return repair_reply(request.user)
    if agent == "critique":
        return json.dumps(CRITIQUE_1)
    if agent == "gap-categorize":
        return gap_reply(request.user)
    raise RuntimeError(f"no scripted reply for agent {agent!r}")


def author(out_path: Path) -> None:
    if out_path.exists():
        out_path.unlink()
    graph = graph_from_dict(json.loads(DATA.joinpath("demo_graph.json").read_text(encoding="utf-8")))
    with tempfile.TemporaryDirectory() as tmp:
        store = open_store(tmp)
        offline = Gateway(ScriptedBackend())
        seed_xdl_db(store, offline, load_pairs(str(DATA.joinpath("demo/seed_pairs.jsonl"))))
        for entry in load_ambiguities(str(DATA.joinpath("demo/seed_ambiguities.jsonl"))):
            add_ambiguity(store, offline, entry)
        gateway = Gateway(FunctionBackend(responder), record_path=out_path)
        run = run_document(_paper(), gateway, store, graph, PipelineConfig(), document_id="demo_paper", title="demo_paper")
        suggestions = categorize_clusters(cluster_flagged(flagged_from_store(store), gateway), gateway)
    for r in run.results:
        print(f"{r.title}: {r.sanitized.category} {r.session.verdict} after {r.session.iterations} iterations")
    for s in suggestions:
        print(f"suggestion: {s.label} ({s.category})")


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(str(DATA.joinpath("demo/demo_transcript.jsonl")))
    author(target)
    print(f"wrote {target}")
