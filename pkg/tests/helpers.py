"""Fixture builders and independent oracles shared by the tests.

The oracles deliberately avoid the code under test: path lengths come from
boolean matrix powers, rankings from a per-record cosine loop, bindings
from enumerating every injective assignment, and volume ledgers from plain
arithmetic on the step list.
"""
from __future__ import annotations

import itertools
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xdlforge.hardware import bind_hardware, graph_from_dict, load_graph
from xdlforge.simulate import initial_state, simulate, system_volume
from xdlforge.xdl import check_xdl
from xdlforge.xdl import default_schema

FIXTURES = Path(__file__).parent / "fixtures"


# XDL text -------------------------------------------------------------------


def xdl_text(hardware, reagents, steps) -> str:
    """One element per line.  ``hardware`` is ``[(id, type)]``, ``steps`` is
    ``[(name, [(attr, value), ...])]``."""
    lines = ["<Synthesis>", "  <Hardware>"]
    lines += [f'    <Component id="{i}" type="{t}"/>' if t else f'    <Component id="{i}"/>' for i, t in hardware]
    lines += ["  </Hardware>", "  <Reagents>"]
    lines += [f'    <Reagent name="{r}"/>' for r in reagents]
    lines += ["  </Reagents>", "  <Procedure>"]
    for name, attrs in steps:
        body = " ".join(f'{k}="{v}"' for k, v in attrs)
        lines.append(f"    <{name} {body}/>" if body else f"    <{name}/>")
    lines += ["  </Procedure>", "</Synthesis>"]
    return "\n".join(lines) + "\n"


def step_lines(text: str) -> list[int]:
    """1-based line numbers of procedure steps in an ``xdl_text`` document."""
    lines = text.splitlines()
    start = lines.index("  <Procedure>")
    end = lines.index("  </Procedure>")
    return list(range(start + 2, end + 1))


# mutation fixtures --------------------------------------------------------------

_ATTR_RE = re.compile(r'(\w+)="([^"]*)"')
_WRONG_DIM = {
    "volume": "5 s",
    "mass": "5 mL",
    "amount": "5 g",
    "temperature": "5 mL",
    "time": "5 g",
    "rotation-rate": "5 min",
    "pressure": "5 mL",
}


def _step_name(line: str) -> str:
    return re.match(r"\s*<(\w+)", line).group(1)


def _specs(line: str):
    schema = default_schema()
    step = schema.steps[_step_name(line)]
    present = [(m.group(1), m.group(2), m.span()) for m in _ATTR_RE.finditer(line)]
    return step, present


def _mutations(line: str) -> dict:
    """Applicable single defects for one step line: code -> new line."""
    step, present = _specs(line)
    out = {}
    name = step.name
    out["UnknownElement"] = line.replace(f"<{name} ", "<Boil ", 1).replace(f"<{name}/", "<Boil/", 1)
    out["UnknownAttribute"] = line.replace("/>", ' colour="red"/>')
    for attr, value, (a, b) in present:
        spec = step.attributes.get(attr)
        if spec is None:
            continue
        if spec.required and "MissingRequiredAttribute" not in out:
            out["MissingRequiredAttribute"] = line[:a].rstrip() + line[b:]
        if spec.kind == "quantity" and "MalformedQuantity" not in out:
            out["MalformedQuantity"] = line[:a] + f'{attr}="12 parsecs"' + line[b:]
        if spec.kind == "quantity" and "WrongDimension" not in out:
            out["WrongDimension"] = line[:a] + f'{attr}="{_WRONG_DIM[spec.dimension]}"' + line[b:]
        if spec.kind == "vessel" and "UndeclaredVessel" not in out:
            out["UndeclaredVessel"] = line[:a] + f'{attr}="ghost_vessel"' + line[b:]
        if spec.kind == "reagent" and "UndeclaredReagent" not in out:
            out["UndeclaredReagent"] = line[:a] + f'{attr}="unobtainium"' + line[b:]
    return out


@dataclass
class Mutant:
    text: str
    injected: list = field(default_factory=list)  # [(code, line)]
    log: list = field(default_factory=list)


def mutate(base: str, rng: random.Random, count: int, codes=None) -> Mutant:
    """Inject ``count`` defects into distinct step lines of ``base``."""
    lines = base.splitlines()
    targets = rng.sample(step_lines(base), count)
    mutant = Mutant("")
    for i, lineno in enumerate(targets):
        options = _mutations(lines[lineno - 1])
        if codes is not None:
            code = codes[i]
        else:
            code = rng.choice(sorted(options))
        lines[lineno - 1] = options[code]
        mutant.injected.append((code, lineno))
        mutant.log.append(f"line {lineno}: {code}")
    mutant.text = "\n".join(lines) + "\n"
    return mutant


# graphs ----------------------------------------------------------------------------


def random_graph_dict(rng: random.Random, n: int, p: float) -> dict:
    classes = ["reactor", "flask", "valve", "pump", "separator", "rotavap", "filter", "waste"]
    nodes = [{"id": f"n{i:02d}", "class": rng.choice(classes)} for i in range(n)]
    edges = [[a["id"], b["id"]] for a in nodes for b in nodes if a is not b and rng.random() < p]
    return {"nodes": nodes, "edges": edges}


def shortest_length_oracle(data: dict, src: str, dst: str):
    """Length (edges) of the shortest src->dst walk whose interior nodes are
    valves/pumps, from powers of the routing-restricted adjacency matrix."""
    ids = [n["id"] for n in data["nodes"]]
    pos = {i: k for k, i in enumerate(ids)}
    n = len(ids)
    if src == dst:
        return 0
    adj = np.zeros((n, n), dtype=np.int64)
    for a, b in data["edges"]:
        adj[pos[a], pos[b]] = 1
    routing = np.array([node["class"] in ("valve", "pump") for node in data["nodes"]], dtype=np.int64)
    inner = adj * routing[None, :]  # steps that land on a routing node
    reach = adj[pos[src]].copy()
    frontier = inner[pos[src]].copy()
    length = 1
    while length <= n:
        if reach[pos[dst]]:
            return length
        reach = (frontier @ adj > 0).astype(np.int64)
        frontier = (frontier @ inner > 0).astype(np.int64)
        length += 1
    return None


def all_pairs_length_oracle(data: dict) -> np.ndarray:
    """Shortest routed walk length for every (src, dst) pair at once, -1
    when unreachable.  Walks of each length k are counted by the k-th
    product of the routing-restricted adjacency matrix, so every length up
    to n is examined."""
    n = len(data["nodes"])
    pos = {node["id"]: k for k, node in enumerate(data["nodes"])}
    adj = np.zeros((n, n), dtype=np.int64)
    for a, b in data["edges"]:
        adj[pos[a], pos[b]] = 1
    routing = np.array([node["class"] in ("valve", "pump") for node in data["nodes"]], dtype=np.int64)
    inner = adj * routing[None, :]
    out = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(out, 0)
    frontier = np.eye(n, dtype=np.int64)  # walks so far, ending on a routing node (or the source)
    for length in range(1, n + 1):
        reach = (frontier @ adj > 0) & (out < 0)
        out[reach] = length
        frontier = (frontier @ inner > 0).astype(np.int64)
        if not frontier.any():
            break
    return out


def exhaustive_binding_count(vessel_classes: list[str], graph_classes: dict) -> int:
    """Largest number of vessels that can be bound by any injective
    assignment to graph nodes of the matching class."""
    nodes = list(graph_classes)
    best = 0
    for k in range(len(vessel_classes), 0, -1):
        for subset in itertools.combinations(range(len(vessel_classes)), k):
            for assignment in itertools.permutations(nodes, k):
                if all(graph_classes[node] == vessel_classes[v] for v, node in zip(subset, assignment)):
                    return k
    return best


# retrieval ---------------------------------------------------------------------------


def brute_force_ranking(vectors, probe, k: int, keep=None):
    """Top-k (index, score) by cosine, ties by insertion order."""
    qn = math.sqrt(sum(float(x) * float(x) for x in probe))
    scored = []
    for i, v in enumerate(vectors):
        if keep is not None and not keep[i]:
            continue
        vn = math.sqrt(float(np.dot(v, v)))
        score = float(np.dot(v, probe)) / (vn * qn) if vn and qn else 0.0
        scored.append((i, score))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


# simulator ledgers -----------------------------------------------------------------------

LINE_GRAPH = {
    "nodes": [
        {"id": "flask_water", "class": "flask", "properties": {"chemical": "water", "max_volume": 1000}},
        {"id": "flask_solvent", "class": "flask", "properties": {"chemical": "solvent", "max_volume": 1000}},
        {"id": "valve", "class": "valve"},
        {"id": "pump", "class": "pump"},
        {"id": "reactor", "class": "reactor", "properties": {"max_volume": 100, "temp_min": 0, "temp_max": 100, "stir_max": 1000}},
        {"id": "separator", "class": "separator", "properties": {"max_volume": 200, "stir_max": 800}},
        {"id": "z_island", "class": "reactor", "properties": {"max_volume": 100}},
        {"id": "waste", "class": "waste", "properties": {"max_volume": 10000}},
    ],
    "edges": [
        ["flask_water", "valve"],
        ["flask_solvent", "valve"],
        ["valve", "pump"],
        ["pump", "reactor"],
        ["pump", "separator"],
        ["pump", "waste"],
        ["reactor", "pump"],
        ["separator", "pump"],
    ],
}


def line_graph():
    return graph_from_dict(LINE_GRAPH)


@dataclass
class LedgerFixture:
    text: str
    expected_volume: dict  # node -> mL after the run
    expected_errors: dict  # kind -> count
    notes: list = field(default_factory=list)


def ledger_fixture(rng: random.Random) -> LedgerFixture:
    """A random Add/Transfer/HeatChill/Stir programme on ``LINE_GRAPH`` with
    its expected final volumes and error counts worked out by hand-style
    arithmetic (no simulator code involved)."""
    caps = {"reactor": 100.0, "separator": 200.0}
    vol = {"flask_water": 1000.0, "flask_solvent": 1000.0, "reactor": 0.0, "separator": 0.0, "z_island": 0.0, "waste": 0.0}
    errors = {"Overflow": 0, "TempOutOfRange": 0, "StirOutOfRange": 0, "NoTransferPath": 0}
    steps = []
    notes = []
    for _ in range(rng.randint(3, 9)):
        kind = rng.choice(["add", "add", "transfer", "heat", "stir", "island"])
        if kind == "add":
            reagent = rng.choice(["water", "solvent"])
            dst = rng.choice(["reactor", "separator"])
            amount = float(rng.choice([5, 10, 20, 30, 45, 60, 80]))
            steps.append(("Add", [("reagent", reagent), ("vessel", dst), ("volume", f"{amount:g} mL")]))
            moved = amount
            if vol[dst] + moved > caps[dst]:
                errors["Overflow"] += 1
                moved = caps[dst] - vol[dst]
            vol[f"flask_{reagent}"] -= moved
            vol[dst] += moved
            notes.append(f"add {amount} -> {dst}: moved {moved}")
        elif kind == "transfer":
            src, dst = rng.choice([("reactor", "separator"), ("separator", "reactor")])
            if vol[src] <= 0:
                continue
            amount = min(vol[src], float(rng.choice([5, 10, 25])))
            steps.append(("Transfer", [("from_vessel", src), ("to_vessel", dst), ("volume", f"{amount:g} mL")]))
            moved = amount
            if vol[dst] + moved > caps[dst]:
                errors["Overflow"] += 1
                moved = caps[dst] - vol[dst]
            vol[src] -= moved
            vol[dst] += moved
        elif kind == "heat":
            temp = rng.choice([25, 60, 100, 140, -10])
            steps.append(("HeatChill", [("vessel", "reactor"), ("temp", f"{temp} °C"), ("time", "10 min")]))
            if not 0 <= temp <= 100:
                errors["TempOutOfRange"] += 1
        elif kind == "stir":
            speed = rng.choice([200, 600, 900, 1500])
            steps.append(("Stir", [("vessel", "separator"), ("time", "5 min"), ("stir_speed", f"{speed} rpm")]))
            if speed > 800:
                errors["StirOutOfRange"] += 1
        else:
            steps.append(("Add", [("reagent", "water"), ("vessel", "island"), ("volume", "5 mL")]))
            errors["NoTransferPath"] += 1
    text = xdl_text(
        [("reactor", "reactor"), ("separator", "separator"), ("island", "reactor")],
        ["water", "solvent"],
        steps,
    )
    return LedgerFixture(text, vol, errors, notes)


def graph12():
    return load_graph((FIXTURES / "graph12.json").read_text())


STEP_KINDS = ["add", "transfer", "separate", "evaporate", "filter", "wash"]


def random_programme(rng):
    vessels = ["reactor", "separator", "rotavap", "filter"]
    steps = []
    for _ in range(rng.randint(1, 12)):
        kind = rng.choice(STEP_KINDS)
        vol = f"{rng.choice([1, 5, 12.5, 40, 90, 300])} mL"
        if kind == "add":
            steps.append(("Add", [("reagent", rng.choice(["water", "methanol"])), ("vessel", rng.choice(vessels)), ("volume", vol)]))
        elif kind == "transfer":
            a, b = rng.sample(vessels, 2)
            steps.append(("Transfer", [("from_vessel", a), ("to_vessel", b), ("volume", vol)]))
        elif kind == "separate":
            steps.append(("Separate", [("from_vessel", rng.choice(vessels)), ("separation_vessel", "separator"), ("to_vessel", rng.choice(vessels))]))
        elif kind == "evaporate":
            steps.append(("Evaporate", [("rotavap", "rotavap"), ("volume", vol)]))
        elif kind == "filter":
            steps.append(("Filter", [("filter_vessel", "filter")]))
        else:
            steps.append(("WashSolid", [("vessel", "filter"), ("solvent", "water"), ("volume", vol)]))
    return xdl_text([(v, v) for v in vessels], ["water", "methanol"], steps)


def check_conservation(text):
    g = graph12()
    doc, errors = check_xdl(text)
    assert errors == []
    binding, _ = bind_hardware(doc, g)
    report = simulate(doc, g, binding)
    start = system_volume(initial_state(g), g)
    removed = sum(e.removed for e in report.events)
    assert abs(system_volume(report.final_state, g) + removed - start) <= 1e-6
    evaporated = sum(e.removed for e in report.events if e.step == "Evaporate")
    everything = sum(s.volume for s in report.final_state.values())
    assert abs(everything + evaporated - start) <= 1e-6
    for nid, state in report.final_state.items():
        assert all(v >= -1e-9 for v in state.contents.values())
        cap = g[nid].max_volume
        if cap is not None:
            assert state.volume <= cap + 1e-6
