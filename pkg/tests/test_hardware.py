from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import FIXTURES, exhaustive_binding_count, random_graph_dict, shortest_length_oracle, xdl_text
from xdlforge.hardware import (
    GraphSchemaError,
    bind_hardware,
    find_path,
    graph_from_dict,
    load_graph,
    vessel_class_hint,
)
from xdlforge.xdl import parse_xdl


def graph12():
    return load_graph((FIXTURES / "graph12.json").read_text())


def test_twelve_node_fixture():
    g = graph12()
    assert len(g) == 12
    assert [n.id for n in g.of_class("valve")] == ["valve_a", "valve_b"]


def test_demo_graph_loads(demo_graph):
    assert len(demo_graph) == 17
    assert len(demo_graph.components()) == 1


def test_edge_to_missing_node_names_it():
    with pytest.raises(GraphSchemaError) as info:
        graph_from_dict({"nodes": [{"id": "a", "class": "flask"}], "edges": [["a", "ghost"]]})
    assert any("ghost" in e for e in info.value.errors)


def test_inverted_temperature_limits():
    with pytest.raises(GraphSchemaError) as info:
        graph_from_dict({"nodes": [{"id": "r", "class": "reactor", "properties": {"temp_min": 100, "temp_max": 20}}]})
    assert any("temp_min" in e for e in info.value.errors)


def test_all_schema_errors_reported_at_once():
    data = {
        "nodes": [
            {"id": "a", "class": "blender"},
            {"id": "a", "class": "flask"},
            {"id": "b", "class": "reactor", "properties": {"max_volume": -1, "colour": "red"}},
        ],
        "edges": [["a", "zz"], "bad"],
    }
    with pytest.raises(GraphSchemaError) as info:
        graph_from_dict(data)
    assert len(info.value.errors) == 6


def test_invalid_json():
    with pytest.raises(GraphSchemaError):
        load_graph("{nope")


def test_linear_chain_path():
    g = graph_from_dict(
        {
            "nodes": [
                {"id": "f", "class": "flask"},
                {"id": "v", "class": "valve"},
                {"id": "p", "class": "pump"},
                {"id": "r", "class": "reactor"},
            ],
            "edges": [["f", "v"], ["v", "p"], ["p", "r"]],
        }
    )
    assert find_path(g, "f", "r") == ["f", "v", "p", "r"]
    assert find_path(g, "r", "f") is None


def test_disconnected_components_have_no_path():
    g = graph_from_dict(
        {"nodes": [{"id": "a", "class": "flask"}, {"id": "b", "class": "reactor"}], "edges": []}
    )
    assert find_path(g, "a", "b") is None
    assert len(g.components()) == 2


def test_path_does_not_pass_through_process_vessels():
    g = graph_from_dict(
        {
            "nodes": [{"id": "a", "class": "flask"}, {"id": "r", "class": "reactor"}, {"id": "b", "class": "reactor"}],
            "edges": [["a", "r"], ["r", "b"]],
        }
    )
    assert find_path(g, "a", "b") is None


def test_path_unknown_node():
    with pytest.raises(KeyError):
        find_path(graph12(), "flask_water", "nowhere")


def test_demo_paths(demo_graph):
    assert find_path(demo_graph, "flask_water", "reactor") == ["flask_water", "valve_1", "pump_1", "valve_2", "reactor"]
    assert find_path(demo_graph, "reactor", "waste") == ["reactor", "valve_2", "waste"]


@pytest.mark.parametrize(
    "vessel, declared, expected",
    [("reactor", None, "reactor"), ("sep_funnel", "separator", "separator"), ("my_rotavap", None, "rotavap"), ("pot", None, "reactor")],
)
def test_class_hints(vessel, declared, expected):
    assert vessel_class_hint(vessel, declared) == expected


def _doc(hardware, reagents):
    doc, errors = parse_xdl(xdl_text(hardware, reagents, []))
    assert not errors
    return doc


def test_complete_binding():
    binding, errors = bind_hardware(_doc([("reactor", "reactor"), ("rotavap", "rotavap")], ["methanol", "MeOH"]), graph12())
    assert errors == []
    assert binding.vessel_map == {"reactor": "reactor", "rotavap": "rotavap"}
    assert binding.reagent_map == {"methanol": "flask_methanol", "MeOH": "flask_methanol"}


def test_missing_reagent_flask():
    g = graph_from_dict({"nodes": [{"id": "r", "class": "reactor"}]})
    _, errors = bind_hardware(_doc([("reactor", "reactor")], ["ethyl acetate"]), g)
    assert [(e.code, e.name) for e in errors] == [("MissingReagentFlask", "ethyl acetate")]


def test_two_vessels_one_reactor_matches_exhaustive_oracle():
    g = graph_from_dict({"nodes": [{"id": "r", "class": "reactor"}, {"id": "s", "class": "separator"}]})
    doc = _doc([("reactor", "reactor"), ("reactor2", "reactor")], [])
    binding, errors = bind_hardware(doc, g)
    oracle = exhaustive_binding_count(["reactor", "reactor"], {"r": "reactor", "s": "separator"})
    assert len(binding.vessel_map) == oracle == 1
    assert [(e.code, e.name) for e in errors] == [("MissingHardware", "reactor2")]


def test_extra_synonyms_bind():
    binding, errors = bind_hardware(_doc([("r", "reactor")], ["sea salt water"]), graph12(), synonyms={"sea salt water": ["brine"]})
    assert errors == [] and binding.reagent_map["sea salt water"] == "flask_brine"


@settings(max_examples=60, deadline=None)
@given(st.randoms(use_true_random=False), st.lists(st.sampled_from(["reactor", "separator", "rotavap", "filter"]), max_size=5))
def test_greedy_binding_is_maximal(rnd, wanted):
    nodes = [{"id": f"n{i}", "class": rnd.choice(["reactor", "separator", "rotavap", "filter", "valve"])} for i in range(5)]
    g = graph_from_dict({"nodes": nodes})
    doc = _doc([(f"v{i}", cls) for i, cls in enumerate(wanted)], [])
    binding, errors = bind_hardware(doc, g)
    oracle = exhaustive_binding_count(wanted, {n["id"]: n["class"] for n in nodes})
    assert len(binding.vessel_map) == oracle
    assert len(binding.vessel_map) + len(errors) == len(wanted)
    assert len(set(binding.vessel_map.values())) == len(binding.vessel_map)


def test_round_trip_to_dict(demo_graph):
    again = graph_from_dict(json.loads(demo_graph.to_json()))
    assert again.to_dict() == demo_graph.to_dict()


@pytest.mark.parametrize("seed", range(20))
def test_find_path_matches_matrix_oracle(seed):
    rng = random.Random(seed)
    data = random_graph_dict(rng, rng.randint(2, 15), rng.uniform(0.05, 0.3))
    g = graph_from_dict(data)
    ids = [n["id"] for n in data["nodes"]]
    for src in ids:
        for dst in ids:
            path = find_path(g, src, dst)
            expect = shortest_length_oracle(data, src, dst)
            assert (None if path is None else len(path) - 1) == expect
            if path:
                assert all(g[x].cls in ("valve", "pump") for x in path[1:-1])
                assert all((a, b) in g.edges for a, b in zip(path, path[1:]))
