"""Step-by-step execution of a bound XDL document on a hardware graph.

The model is volumetric only: liquids are tracked per vessel as
``name -> mL``, solids as ``name -> g`` (they take no volume).  Reagent
flasks start full and every liquid movement goes through
:func:`~xdlforge.hardware.find_path`, so a plain ``Add`` conserves the
plant's total liquid volume.  Only evaporation and routing to ``waste``
nodes remove liquid from the system, and both are logged.

Findings never stop the run unless ``abort_on_first`` is set.  Violations
are clamped (a move is cut to what the source holds and what the target
can take) so the state stays physical after an error.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .hardware import Binding, HardwareGraph, ROUTING_CLASSES, find_path
from .units import QuantityError, normalize_quantity
from .xdl.model import XdlDocument, XdlStep

AMBIENT_TEMP = 20.0
DEFAULT_STIR_RPM = 250.0
DEFAULT_FLASK_VOLUME = 1000.0
DEFAULT_ORGANIC_FRACTION = 0.5
EPS = 1e-9

ERROR_KINDS = (
    "TempOutOfRange",
    "StirOutOfRange",
    "Overflow",
    "Underflow",
    "NoTransferPath",
    "UnknownVessel",
    "UnboundReagent",
)


@dataclass
class VesselState:
    contents: dict = field(default_factory=dict)  # liquid name -> mL
    solids: dict = field(default_factory=dict)  # solid name -> g
    amounts: dict = field(default_factory=dict)  # solid name -> mmol, when added by amount
    temperature: float = AMBIENT_TEMP
    stir_rate: float = 0.0

    @property
    def volume(self) -> float:
        return sum(self.contents.values())

    def to_dict(self) -> dict:
        return {
            "volume": round(self.volume, 9),
            "contents": [[k, round(v, 9)] for k, v in self.contents.items()],
            "solids": [[k, round(v, 9)] for k, v in self.solids.items()],
            "amounts": [[k, round(v, 9)] for k, v in self.amounts.items()],
            "temperature": self.temperature,
            "stir_rate": self.stir_rate,
        }


@dataclass(frozen=True)
class SimulationError:
    kind: str
    step_index: int
    message: str

    def __str__(self) -> str:
        return f"{self.kind} at step {self.step_index + 1}: {self.message}"


@dataclass
class Event:
    step_index: int
    step: str
    summary: str
    deltas: dict  # node id -> volume change in mL
    removed: float = 0.0  # mL that left the system (evaporated or sent to waste)


@dataclass
class SimulationReport:
    events: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    final_state: dict = field(default_factory=dict)
    aborted: bool = False

    @property
    def verdict(self) -> str:
        return "pass" if not self.errors else "fail"

    @property
    def passed(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "aborted": self.aborted,
            "events": [asdict(e) for e in self.events],
            "errors": [asdict(e) for e in self.errors],
            "final_state": {k: v.to_dict() for k, v in sorted(self.final_state.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


def initial_state(graph: HardwareGraph) -> dict:
    states = {}
    for node in graph.nodes.values():
        if node.cls in ROUTING_CLASSES:
            continue
        st = VesselState()
        if node.cls == "flask" and node.chemical:
            fill = node.properties.get("volume", node.max_volume or DEFAULT_FLASK_VOLUME)
            if node.max_volume is not None:
                fill = min(fill, node.max_volume)
            if fill > 0:
                st.contents[node.chemical] = float(fill)
        states[node.id] = st
    return states


def system_volume(states: dict, graph: HardwareGraph) -> float:
    """Liquid held anywhere except waste nodes."""
    return sum(s.volume for nid, s in states.items() if graph[nid].cls != "waste")


class _StepRun:
    def __init__(self, step: XdlStep, states: dict, graph: HardwareGraph, binding: Binding, index: int, organic_fraction: float):
        self.step = step
        self.states = states
        self.graph = graph
        self.binding = binding
        self.index = index
        self.errors: list[SimulationError] = []
        self.notes: list[str] = []
        self.organic_fraction = organic_fraction

    def fail(self, kind: str, message: str) -> None:
        self.errors.append(SimulationError(kind, self.index, message))

    def vessel(self, attr: str) -> Optional[str]:
        name = self.step.get(attr)
        if name is None:
            return None
        node = self.binding.vessel_map.get(name)
        if node is None or node not in self.states:
            self.fail("UnknownVessel", f"{attr}={name!r} is not bound to a graph vessel")
            return None
        return node

    def flask(self, attr: str) -> Optional[str]:
        name = self.step.get(attr)
        if name is None:
            return None
        node = self.binding.reagent_map.get(name)
        if node is None or node not in self.states:
            self.fail("UnboundReagent", f"{attr}={name!r} has no bound reagent flask")
            return None
        return node

    def quantity(self, attr: str, dimension: str) -> Optional[float]:
        raw = self.step.get(attr)
        if raw is None:
            return None
        try:
            return normalize_quantity(raw, dimension).value
        except QuantityError:
            return None

    def waste_for(self, src: str) -> Optional[list[str]]:
        for node in self.graph.of_class("waste"):
            path = find_path(self.graph, src, node.id)
            if path:
                return path
        return None

    def move(self, src: str, dst: str, volume: float, path: Optional[list[str]] = None) -> float:
        """Move ``volume`` mL of the mixture in ``src`` to ``dst``; returns
        the amount actually moved after clamping."""
        if volume <= 0 or src == dst:
            return 0.0
        if path is None:
            path = find_path(self.graph, src, dst)
        if path is None:
            self.fail("NoTransferPath", f"no valve/pump route from {src!r} to {dst!r}")
            return 0.0
        source = self.states[src]
        target = self.states[dst]
        available = source.volume
        amount = volume
        if amount > available + EPS:
            self.fail(
                "Underflow",
                f"requested {volume:g} mL from {src!r} which holds {available:g} mL; clamped to {available:g} mL",
            )
            amount = available
        cap = self.graph[dst].max_volume
        if cap is not None and target.volume + amount > cap + EPS:
            self.fail(
                "Overflow",
                f"{dst!r} would hold {target.volume + amount:g} mL > max_volume {cap:g} mL",
            )
            amount = max(0.0, cap - target.volume)
        if amount <= 0 or available <= 0:
            return 0.0
        frac = min(1.0, amount / available)
        for name in list(source.contents):
            portion = source.contents[name] * frac
            source.contents[name] -= portion
            if source.contents[name] <= EPS:
                del source.contents[name]
            target.contents[name] = target.contents.get(name, 0.0) + portion
        return amount

    def to_waste(self, src: str, volume: float) -> float:
        if volume <= 0:
            return 0.0
        path = self.waste_for(src)
        if path is None:
            self.fail("NoTransferPath", f"no route from {src!r} to any waste node")
            return 0.0
        return self.move(src, path[-1], volume, path)

    def check_temp(self, node: str, attr: str = "temp") -> Optional[float]:
        raw = self.step.get(attr)
        if raw is None:
            return None
        limits = self.graph[node]
        temp = self.quantity(attr, "temperature")
        if temp is None:
            self.fail(
                "TempOutOfRange",
                f"{attr}={raw!r} is not a numeric temperature; resolve it to °C before simulation",
            )
            return None
        lo, hi = limits.temp_min, limits.temp_max
        if lo is not None and temp < lo:
            self.fail("TempOutOfRange", f"{temp:g} °C is below temp_min {lo:g} °C of {node!r}")
            return lo
        if hi is not None and temp > hi:
            self.fail("TempOutOfRange", f"{temp:g} °C is above temp_max {hi:g} °C of {node!r}")
            return hi
        return temp

    def check_stir(self, node: str, default: Optional[float]) -> Optional[float]:
        speed = self.quantity("stir_speed", "rotation-rate")
        if speed is None:
            return default
        top = self.graph[node].stir_max
        if speed < 0:
            self.fail("StirOutOfRange", f"stir speed {speed:g} rpm is negative (min 0 rpm)")
            return 0.0
        if top is not None and speed > top:
            self.fail("StirOutOfRange", f"{speed:g} rpm exceeds stir_max {top:g} rpm of {node!r}")
            return top
        return speed

    def add_liquid(self, reagent_attr: str, vessel: Optional[str], volume: Optional[float]) -> None:
        flask = self.flask(reagent_attr)
        if flask is None or vessel is None or volume is None:
            return
        moved = self.move(flask, vessel, volume)
        self.notes.append(f"{moved:g} mL {self.step.get(reagent_attr)} -> {vessel}")

    def run(self) -> None:
        name = self.step.name
        handler = getattr(self, f"_{name}", None)
        if handler is None:
            self.notes.append("not simulated")
            return
        handler()

    # one handler per supported step

    def _Add(self) -> None:
        vessel = self.vessel("vessel")
        volume = self.quantity("volume", "volume")
        if volume is not None:
            self.add_liquid("reagent", vessel, volume)
            return
        flask = self.flask("reagent")
        if vessel is None or flask is None:
            return
        solid = self.step.get("reagent")
        st = self.states[vessel]
        mass = self.quantity("mass", "mass")
        if mass is not None:
            st.solids[solid] = st.solids.get(solid, 0.0) + mass
        amount = self.quantity("amount", "amount")
        if amount is not None:
            st.amounts[solid] = st.amounts.get(solid, 0.0) + amount
        self.notes.append(f"solid {solid} -> {vessel}")

    def _Transfer(self) -> None:
        src = self.vessel("from_vessel")
        dst = self.vessel("to_vessel")
        volume = self.quantity("volume", "volume")
        if src is None or dst is None or volume is None:
            return
        if src == dst:
            self.notes.append("transfer onto itself")
            return
        moved = self.move(src, dst, volume)
        self.notes.append(f"{moved:g} mL {src} -> {dst}")

    def _Stir(self) -> None:
        vessel = self.vessel("vessel")
        if vessel is None:
            return
        speed = self.check_stir(vessel, self.states[vessel].stir_rate or DEFAULT_STIR_RPM)
        self.states[vessel].stir_rate = speed
        self.notes.append(f"stir {vessel} at {speed:g} rpm")

    _StartStir = _Stir

    def _StopStir(self) -> None:
        vessel = self.vessel("vessel")
        if vessel is not None:
            self.states[vessel].stir_rate = 0.0

    def _HeatChill(self) -> None:
        vessel = self.vessel("vessel")
        if vessel is None:
            return
        temp = self.check_temp(vessel)
        if temp is not None:
            self.states[vessel].temperature = temp
            self.notes.append(f"{vessel} at {temp:g} °C")
        if self.step.get("stir_speed") is not None:
            self.states[vessel].stir_rate = self.check_stir(vessel, None)

    _HeatChillToTemp = _HeatChill

    def _Dissolve(self) -> None:
        vessel = self.vessel("vessel")
        self.add_liquid("solvent", vessel, self.quantity("volume", "volume"))
        if vessel is not None:
            temp = self.check_temp(vessel)
            if temp is not None:
                self.states[vessel].temperature = temp

    def _Evaporate(self) -> None:
        node = self.vessel("rotavap")
        if node is None:
            return
        temp = self.check_temp(node)
        if temp is not None:
            self.states[node].temperature = temp
        st = self.states[node]
        held = st.volume
        volume = self.quantity("volume", "volume")
        if volume is None:
            volume = held
        elif volume > held + EPS:
            self.fail("Underflow", f"cannot evaporate {volume:g} mL from {node!r} holding {held:g} mL; clamped")
            volume = held
        if held > 0 and volume > 0:
            frac = min(1.0, volume / held)
            for name in list(st.contents):
                st.contents[name] -= st.contents[name] * frac
                if st.contents[name] <= EPS:
                    del st.contents[name]
        self.notes.append(f"evaporated {volume:g} mL in {node}")

    def _Filter(self) -> None:
        node = self.vessel("filter_vessel")
        if node is None:
            return
        liquid = self.states[node].volume
        if self.step.get("filtrate_vessel") is not None:
            dst = self.vessel("filtrate_vessel")
            if dst is not None:
                moved = self.move(node, dst, liquid)
                self.notes.append(f"filtrate {moved:g} mL -> {dst}")
        else:
            moved = self.to_waste(node, liquid)
            self.notes.append(f"filtrate {moved:g} mL -> waste")

    def _WashSolid(self) -> None:
        node = self.vessel("vessel")
        self.add_liquid("solvent", node, self.quantity("volume", "volume"))
        if node is not None:
            moved = self.to_waste(node, self.states[node].volume)
            self.notes.append(f"wash liquor {moved:g} mL -> waste")

    def _Dry(self) -> None:
        node = self.vessel("vessel")
        if node is not None:
            temp = self.check_temp(node)
            if temp is not None:
                self.states[node].temperature = temp

    def _Separate(self) -> None:
        src = self.vessel("from_vessel")
        sep = self.vessel("separation_vessel")
        dst = self.vessel("to_vessel")
        if src is None or sep is None or dst is None:
            return
        if src != sep:
            self.move(src, sep, self.states[src].volume)
        if self.step.get("solvent") is not None:
            self.add_liquid("solvent", sep, self.quantity("solvent_volume", "volume"))
        fraction = self.organic_fraction
        raw = self.step.get("organic_fraction")
        if raw is not None:
            try:
                fraction = float(raw)
            except ValueError:
                pass
        total = self.states[sep].volume
        organic = total * fraction
        aqueous = total - organic
        kept = self.move(sep, dst, organic) if dst != sep else organic
        drained = self.to_waste(sep, aqueous)
        self.notes.append(f"organic {kept:g} mL -> {dst}, aqueous {drained:g} mL -> waste")

    def _Precipitate(self) -> None:
        node = self.vessel("vessel")
        if self.step.get("reagent") is not None and self.step.get("volume") is not None:
            self.add_liquid("reagent", node, self.quantity("volume", "volume"))
        if node is not None:
            temp = self.check_temp(node)
            if temp is not None:
                self.states[node].temperature = temp

    def _Wait(self) -> None:
        self.notes.append(f"wait {self.step.get('time')}")


def _apply(step: XdlStep, states: dict, graph, binding, index: int, organic_fraction: float):
    new = copy.deepcopy(states)
    run = _StepRun(step, new, graph, binding, index, organic_fraction)
    run.run()
    return new, run.errors, "; ".join(run.notes) or step.name


def step_effects(
    step: XdlStep,
    states: dict,
    graph: HardwareGraph,
    binding: Binding,
    index: int = 0,
    organic_fraction: float = DEFAULT_ORGANIC_FRACTION,
) -> tuple[dict, list[SimulationError]]:
    """Apply one step to a copy of ``states``.  The input is not modified."""
    new, errors, _ = _apply(step, states, graph, binding, index, organic_fraction)
    return new, errors


def simulate(
    doc: XdlDocument,
    graph: HardwareGraph,
    binding: Binding,
    abort_on_first: bool = False,
    organic_fraction: float = DEFAULT_ORGANIC_FRACTION,
) -> SimulationReport:
    """Run every step in order and collect all constraint violations."""
    states = initial_state(graph)
    report = SimulationReport()
    for index, step in enumerate(doc.procedure):
        new, errors, summary = _apply(step, states, graph, binding, index, organic_fraction)
        deltas = {}
        for nid in sorted(new):
            d = new[nid].volume - states[nid].volume
            if abs(d) > EPS:
                deltas[nid] = round(d, 9)
        removed = system_volume(states, graph) - system_volume(new, graph)
        report.events.append(
            Event(index, step.name, summary, deltas, round(removed, 9) if abs(removed) > EPS else 0.0)
        )
        report.errors.extend(errors)
        states = new
        if errors and abort_on_first:
            report.aborted = index < len(doc.procedure) - 1
            break
    report.final_state = states
    return report
