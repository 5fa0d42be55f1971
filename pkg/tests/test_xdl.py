from __future__ import annotations

import json
from collections import Counter

import pytest
from hypothesis import given, settings

from helpers import FIXTURES, mutate, step_lines
from strategies import documents
from xdlforge.xdl import (
    ErrorCode,
    Reagent,
    SerializationError,
    Vessel,
    XdlDocument,
    XdlStep,
    check_xdl,
    default_schema,
    parse_xdl,
    serialize_xdl,
    validate_document,
)


def codes(errors):
    return sorted((e.code.value, e.line) for e in errors)


def test_schema_has_fifteen_steps():
    assert len(default_schema().vocabulary) == 15


def test_three_step_fixture_parses_clean():
    doc, errors = parse_xdl((FIXTURES / "three_step.xdl").read_text())
    assert errors == []
    assert [s.name for s in doc.procedure] == ["Add", "HeatChill", "Wait"]


def test_four_defects_reported_at_injected_lines():
    text = (FIXTURES / "four_defects.xdl").read_text()
    injected = [tuple(x) for x in json.loads((FIXTURES / "four_defects.log.json").read_text())]
    doc, errors = check_xdl(text)
    assert doc is not None
    assert codes(errors) == sorted(injected)
    assert Counter(c for c, _ in injected) == {"MalformedQuantity": 2, "UnknownElement": 1, "MissingRequiredAttribute": 1}


def test_malformed_temperature_located_at_attribute():
    text = (FIXTURES / "three_step.xdl").read_text().replace('temp="50 °C"', 'temp="25 Kelvin-ish"')
    _, errors = parse_xdl(text)
    assert len(errors) == 1
    err = errors[0]
    assert err.code is ErrorCode.MalformedQuantity
    line = text.splitlines()[err.line - 1]
    assert line[err.location.column - 1 :].startswith("temp=")


def test_symbolic_reflux_accepted():
    text = (FIXTURES / "three_step.xdl").read_text().replace('temp="50 °C"', 'temp="reflux"')
    assert check_xdl(text)[1] == []


def test_truncated_document_reports_malformed_xml():
    text = (FIXTURES / "three_step.xdl").read_text()
    doc, errors = parse_xdl(text[: len(text) // 2])
    assert any(e.code is ErrorCode.MalformedXml for e in errors)


def test_garbage_is_malformed_not_a_crash():
    doc, errors = parse_xdl("not xml at all")
    assert doc is None
    assert errors and errors[0].code is ErrorCode.MalformedXml


def test_wrong_root():
    doc, errors = parse_xdl("<Recipe/>")
    assert doc is None and errors[0].code is ErrorCode.UnknownElement


def test_duplicate_declarations():
    text = """<Synthesis>
  <Hardware>
    <Component id="reactor"/>
    <Component id="reactor"/>
  </Hardware>
  <Reagents>
    <Reagent name="water"/>
    <Reagent name="water"/>
  </Reagents>
  <Procedure/>
</Synthesis>"""
    _, errors = parse_xdl(text)
    assert codes(errors) == [("DuplicateDeclaration", 4), ("DuplicateDeclaration", 8)]


def test_one_of_group_enforced():
    text = (FIXTURES / "three_step.xdl").read_text().replace(' volume="20 mL"', "")
    _, errors = parse_xdl(text)
    assert [e.code for e in errors] == [ErrorCode.MissingRequiredAttribute]
    assert "one of" in errors[0].message


def _doc(*steps):
    return XdlDocument(
        (Vessel("reactor", "reactor"),),
        (Reagent("methanol"),),
        tuple(XdlStep(name, tuple(attrs)) for name, attrs in steps),
    )


def test_validate_declared_reagent():
    doc = _doc(("Add", [("reagent", "methanol"), ("vessel", "reactor"), ("volume", "5 mL")]))
    assert validate_document(doc) == []


def test_validate_undeclared_vessel():
    doc = _doc(("Add", [("reagent", "methanol"), ("vessel", "reactor2"), ("volume", "5 mL")]))
    assert [e.code for e in validate_document(doc)] == [ErrorCode.UndeclaredVessel]


def test_validate_wrong_dimension():
    doc = _doc(("HeatChill", [("vessel", "reactor"), ("temp", "50 mL"), ("time", "1 h")]))
    assert [e.code for e in validate_document(doc)] == [ErrorCode.WrongDimension]


def test_validate_is_idempotent():
    doc, _ = parse_xdl((FIXTURES / "four_defects.xdl").read_text())
    assert validate_document(doc) == validate_document(doc)


def test_serialize_empty_procedure():
    doc = XdlDocument((Vessel("reactor"),), (), ())
    text = serialize_xdl(doc)
    assert "<Procedure>" in text
    again, errors = parse_xdl(text)
    assert errors == [] and again == doc


def test_tosylate_fixture_round_trips_with_23_steps():
    doc, errors = check_xdl((FIXTURES / "tosylate.xdl").read_text())
    assert errors == []
    again, errors = parse_xdl(serialize_xdl(doc))
    assert errors == [] and len(again.procedure) == 23 and again == doc


def test_serialize_refuses_placeholders():
    doc = _doc(("Add", [("reagent", "methanol"), ("vessel", "reactor"), ("volume", "?? mL")]))
    with pytest.raises(SerializationError):
        serialize_xdl(doc)


def test_attribute_order_preserved():
    doc = _doc(("Add", [("volume", "5 mL"), ("vessel", "reactor"), ("reagent", "methanol")]))
    again, _ = parse_xdl(serialize_xdl(doc))
    assert [k for k, _ in again.procedure[0].attributes] == ["volume", "vessel", "reagent"]


def test_special_characters_escape():
    doc = XdlDocument((Vessel("reactor"),), (Reagent('5 % "HCl" & <water>\n'),), ())
    again, errors = parse_xdl(serialize_xdl(doc))
    assert errors == [] and again == doc


def test_mutation_generator_oracle_single_case():
    base = (FIXTURES / "tosylate.xdl").read_text()
    import random

    m = mutate(base, random.Random(1), 3)
    assert len(m.injected) == 3
    assert {line for _, line in m.injected} <= set(step_lines(base))


@settings(max_examples=150, deadline=None)
@given(documents())
def test_round_trip_property(doc):
    text = serialize_xdl(doc)
    again, errors = parse_xdl(text)
    assert errors == []
    assert again == doc
    assert serialize_xdl(again) == text


@settings(max_examples=60, deadline=None)
@given(documents())
def test_generated_documents_validate_clean(doc):
    assert validate_document(doc) == []
