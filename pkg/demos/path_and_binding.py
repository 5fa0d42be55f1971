"""Show how XDL vessels are bound to platform nodes and which tubing
routes the simulator would use between them.

    python demos/path_and_binding.py
"""
from __future__ import annotations

from importlib import resources

from xdlforge.hardware import bind_hardware, find_path, load_graph
from xdlforge.xdl import check_xdl

XDL = """<Synthesis>
  <Hardware>
    <Component id="reactor" type="reactor"/>
    <Component id="separator" type="separator"/>
    <Component id="rotavap" type="rotavap"/>
  </Hardware>
  <Reagents>
    <Reagent name="ethyl acetate"/>
    <Reagent name="water"/>
  </Reagents>
  <Procedure>
    <Add reagent="ethyl acetate" vessel="reactor" volume="30 mL"/>
    <Transfer from_vessel="reactor" to_vessel="separator" volume="30 mL"/>
    <Separate purpose="wash" from_vessel="separator" separation_vessel="separator" to_vessel="rotavap" solvent="water" solvent_volume="20 mL"/>
    <Evaporate rotavap="rotavap" temp="40 °C"/>
  </Procedure>
</Synthesis>
"""


def main() -> None:
    graph = load_graph(resources.files("xdlforge").joinpath("data/demo_graph.json").read_text(encoding="utf-8"))
    doc, errors = check_xdl(XDL)
    assert not errors, errors
    binding, bind_errors = bind_hardware(doc, graph)
    for vessel, node in sorted(binding.vessel_map.items()):
        print(f"vessel {vessel:<10} -> {node}")
    for reagent, node in sorted(binding.reagent_map.items()):
        print(f"reagent {reagent:<14} -> {node}")
    for e in bind_errors:
        print(f"unbound: {e}")
    nodes = list(binding.vessel_map.values())
    for src in nodes:
        for dst in nodes:
            if src != dst:
                path = find_path(graph, src, dst)
                print(f"{src} -> {dst}: {' > '.join(path) if path else 'no route'}")


if __name__ == "__main__":
    main()
