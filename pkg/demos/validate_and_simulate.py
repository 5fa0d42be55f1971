"""Check an XDL file, bind it to the shipped demo platform and simulate it.

    python demos/validate_and_simulate.py [file.xdl]

Without an argument a small overflowing procedure is used, so the
simulator has something to report.
"""
from __future__ import annotations

import json
import sys
from importlib import resources

from xdlforge.hardware import bind_hardware, load_graph
from xdlforge.simulate import simulate
from xdlforge.xdl import check_xdl

EXAMPLE = """<Synthesis>
  <Hardware>
    <Component id="reactor" type="reactor"/>
  </Hardware>
  <Reagents>
    <Reagent name="methanol"/>
    <Reagent name="water"/>
  </Reagents>
  <Procedure>
    <Add reagent="methanol" vessel="reactor" volume="150 mL"/>
    <Add reagent="water" vessel="reactor" volume="120 mL"/>
    <HeatChill vessel="reactor" temp="reflux" time="1 h"/>
  </Procedure>
</Synthesis>
"""


def main() -> int:
    text = open(sys.argv[1], encoding="utf-8").read() if len(sys.argv) > 1 else EXAMPLE
    doc, errors = check_xdl(text)
    if errors:
        print("XDL errors:")
        for e in errors:
            print(f"  {e}")
        return 1
    graph = load_graph(resources.files("xdlforge").joinpath("data/demo_graph.json").read_text(encoding="utf-8"))
    binding, bind_errors = bind_hardware(doc, graph)
    print("binding:", json.dumps(binding.vessel_map, sort_keys=True))
    if bind_errors:
        for e in bind_errors:
            print(f"  {e}")
        return 1
    report = simulate(doc, graph, binding)
    for event in report.events:
        print(f"{event.step_index + 1:>3}. {event.step:<12} {event.summary}")
    for error in report.errors:
        print(f"ERROR {error}")
    print("verdict:", report.verdict)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
