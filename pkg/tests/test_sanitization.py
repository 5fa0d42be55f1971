from __future__ import annotations

import json
from decimal import Decimal

import httpx
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from xdlforge.llm import FunctionBackend, Gateway
from xdlforge.memory import AmbiguityEntry, add_ambiguity, load_ambiguities
from xdlforge.prompts import agent_tag
from xdlforge.sanitization import (
    ChemicalClient,
    ChemicalInfo,
    SanitizedProcedure,
    SolventTable,
    amount_to_mass,
    default_solvents,
    flag_markers,
    lookup_chemical,
    resolve_ambiguities,
    sanitize,
    solvent_bp,
    split_sentences,
)

REFLUX = "Methyl benzoate (1.36 g) was dissolved in methanol (20 mL) and heated at reflux for 2 h."


def procedure_gateway(category="executable", text=None, seen=None):
    def responder(request):
        if seen is not None:
            seen.append(request)
        assert agent_tag(request.system) == "procedure"
        body = text if text is not None else request.user.split("Procedure:\n", 1)[1].split("\n\nResolved", 1)[0]
        return "```json\n" + json.dumps({"sanitized_text": body, "category": category, "chemicals": [{"name": "methanol", "role": "solvent"}], "notes": []}) + "\n```"

    return Gateway(FunctionBackend(responder), embed_dim=256)


# chemical data


def test_methanol_molar_mass_from_cache():
    info = lookup_chemical("methanol", ChemicalClient())
    assert info.molar_mass == pytest.approx(32.04, abs=0.005)
    assert info.iupac_name == "methanol"


def test_lookup_by_synonym():
    client = ChemicalClient()
    assert client.lookup("MeOH").molar_mass == client.lookup("methanol").molar_mass


def test_gibberish_not_found():
    client = ChemicalClient()
    assert lookup_chemical("qwxzzyl-flarbonate", client) is None
    assert client.misses == ["qwxzzyl-flarbonate"] and client.network_calls == 0


def test_repeated_lookup_zero_network():
    def handler(request):
        return httpx.Response(200, json={"PropertyTable": {"Properties": [{"IUPACName": "oxidane", "MolecularWeight": "18.015"}]}})

    client = ChemicalClient(live=True, http=httpx.Client(transport=httpx.MockTransport(handler)))
    assert client.lookup("unlisted compound").molar_mass == pytest.approx(18.015)
    assert client.network_calls == 1
    client.lookup("unlisted compound")
    assert client.network_calls == 1


def test_live_lookup_written_to_cache(tmp_path):
    handler = lambda request: httpx.Response(200, json={"PropertyTable": {"Properties": [{"IUPACName": "x", "MolecularWeight": 100.5}]}})  # noqa: E731
    path = tmp_path / "cache.json"
    ChemicalClient(path, live=True, http=httpx.Client(transport=httpx.MockTransport(handler))).lookup("novel compound")
    assert ChemicalClient(path).lookup("novel compound").molar_mass == 100.5


def test_live_not_found_and_server_errors():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(503 if "flaky" in str(request.url) else 404)

    client = ChemicalClient(live=True, http=httpx.Client(transport=httpx.MockTransport(handler)), retries=2)
    assert client.lookup("nothing") is None
    assert client.lookup("flaky") is None
    assert len(calls) == 1 + 3


def test_chemical_info_rejects_bad_mass():
    with pytest.raises(ValueError):
        ChemicalInfo("x", molar_mass=0)


# solvents and arithmetic


def test_methanol_boiling_point():
    assert solvent_bp("methanol") == 64.7
    assert solvent_bp("MeOH") == solvent_bp("methanol")
    assert solvent_bp("unobtainium") is None


def test_solvent_mentions_in_order():
    assert default_solvents().find_in("Dissolve in EtOAc, wash with water, then MeOH.") == ["ethyl acetate", "water", "methanol"]


def test_custom_solvent_table(tmp_path):
    path = tmp_path / "s.csv"
    path.write_text("name,synonyms,bp_c\nfoo,bar;baz,42.5\n")
    table = SolventTable.load(path)
    assert len(table) == 1 and table.bp("BAZ") == 42.5 and table.canonical("bar") == "foo"


@pytest.mark.parametrize(
    "amount, mm, expected",
    [
        (1, 1000, Decimal("1.000")),
        (10, 180.16, Decimal("1.802")),
        (3.5, 46.07, Decimal("0.1612")),
        ("999.950", "1.00", Decimal("1.000")),
        ("99.995", "100", Decimal("10.00")),
    ],
)
def test_amount_to_mass(amount, mm, expected):
    assert amount_to_mass(amount, mm) == expected


@pytest.mark.parametrize("amount, mm", [(0, 32.04), (-1, 32.04), (1, 0)])
def test_amount_to_mass_rejects(amount, mm):
    with pytest.raises(ValueError):
        amount_to_mass(amount, mm)


@example(Decimal("999.950"), Decimal("1.00"))
@given(st.decimals(min_value="0.001", max_value="10000", places=3), st.decimals(min_value="1", max_value="2000", places=2))
def test_amount_to_mass_four_significant_figures(amount, mm):
    mass = amount_to_mass(amount, mm)
    exact = amount * mm / 1000
    assert len(mass.as_tuple().digits) == 4
    assert abs(mass - exact) <= Decimal(1).scaleb(mass.adjusted() - 3) / 2


# ambiguity resolution


def test_sentences_are_verbatim():
    text = "Stir overnight. Then filter!\nWash with brine"
    sentences = split_sentences(text)
    assert sentences == ["Stir overnight.", "Then filter!", "Wash with brine"]
    assert all(s in text for s in sentences)


def test_markers():
    assert "overnight" in flag_markers("Stir overnight.")
    assert flag_markers("Add 5 mL water.") == []


def seeded_cad(store, gateway):
    for entry in load_ambiguities(__import__("importlib").resources.files("xdlforge").joinpath("data/demo/seed_ambiguities.jsonl")):
        add_ambiguity(store, gateway, entry)


def test_near_identical_sentence_gets_cad_entry(store, offline_gateway):
    seeded_cad(store, offline_gateway)
    resolutions, questions = resolve_ambiguities("The mixture was heated at reflux for 3 h.", store, offline_gateway)
    assert len(resolutions) == 1
    # oracle: brute-force best match over the stored fragments
    probe = offline_gateway.embed_one("The mixture was heated at reflux for 3 h.", 256)
    best = max(store.records("ambiguities"), key=lambda r: float(r.vector @ probe))
    assert resolutions[0].explanation == best.metadata["explanation"]
    assert resolutions[0].similarity == pytest.approx(float(best.vector @ probe), abs=1e-6)
    assert questions == []


def test_empty_cad_no_ask_logs_questions(store, offline_gateway):
    resolutions, questions = resolve_ambiguities("Stir overnight. Add 5 mL water.", store, offline_gateway)
    assert resolutions == []
    assert [q.fragment for q in questions] == ["Stir overnight."]


def test_expert_answer_persists(store, offline_gateway):
    asked = []

    def ask(fragment, question):
        asked.append(fragment)
        return "Overnight means 16 h."

    first, _ = resolve_ambiguities("Stir overnight.", store, offline_gateway, ask)
    assert first[0].source == "expert_answer" and asked == ["Stir overnight."]
    again, questions = resolve_ambiguities("Stir overnight.", store, offline_gateway, ask)
    assert asked == ["Stir overnight."]
    assert again[0].explanation == "Overnight means 16 h." and again[0].source == "expert_answer"
    assert store.count("ambiguities") == 1


def test_blank_answer_stays_a_question(store, offline_gateway):
    _, questions = resolve_ambiguities("Stir overnight.", store, offline_gateway, lambda f, q: "  ")
    assert len(questions) == 1 and store.count("ambiguities") == 0


# sanitize


def test_reflux_prompt_carries_methanol_boiling_point(store):
    seen = []
    gw = procedure_gateway(text=REFLUX.replace("at reflux", "at 64.7 °C"), seen=seen)
    result = sanitize(REFLUX, gw, store, title="Reflux demo")
    assert "methanol: boiling point 64.7 °C" in seen[0].user
    assert "64.7 °C" in result.sanitized and result.category == "executable"
    methanol = next(c for c in result.chemicals if c.name == "methanol")
    assert methanol.boiling_point == 64.7 and methanol.role == "solvent"
    assert methanol.molar_mass == pytest.approx(32.04, abs=0.005)


def test_general_procedure_is_blueprint(store):
    gw = procedure_gateway(category="blueprint")
    result = sanitize("Compounds 3a-3f were prepared according to GP1.", gw, store)
    assert result.category == "blueprint"


def test_missing_quantity_is_incomplete(store):
    gw = procedure_gateway(text="Add [UNRESOLVED: amount] of methanol.", category="executable")
    result = sanitize("Add methanol.", gw, store)
    assert result.category == "incomplete"


def test_malformed_reply_is_incomplete(store):
    gw = Gateway(FunctionBackend(lambda r: "sorry"), embed_dim=256)
    result = sanitize("Add methanol (5 mL).", gw, store)
    assert result.category == "incomplete" and result.sanitized == "Add methanol (5 mL)."


def test_blueprint_pulls_document_context(store, offline_gateway):
    from xdlforge.memory import VectorRecord

    vec = offline_gateway.embed_one("General procedure GP1: stir the aldehyde with the amine.", 256)
    store.upsert(VectorRecord("doc:0", "documents", "General procedure GP1: stir the aldehyde with the amine.", vec))
    seen = []
    sanitize("Prepared according to GP1 from 4-anisaldehyde.", procedure_gateway("blueprint", seen=seen), store)
    assert "stir the aldehyde with the amine" in seen[0].user
    seen.clear()
    sanitize("Prepared according to GP1 from 4-anisaldehyde.", procedure_gateway("blueprint", seen=seen), store, use_doc_db=False)
    assert "Related document excerpts:\nnone" in seen[0].user


def test_ablated_cad_and_chem_data(store, offline_gateway):
    add_ambiguity(store, offline_gateway, AmbiguityEntry("Heated at reflux.", "Use the solvent boiling point."))
    seen = []
    result = sanitize("Heated at reflux.", procedure_gateway(seen=seen), store, use_cad=False, use_chem_data=False)
    assert result.resolutions == []
    assert "Resolved ambiguities:\nnone" in seen[0].user and "Chemical data:\nnone" in seen[0].user


def test_round_trip_dict(store):
    result = sanitize(REFLUX, procedure_gateway(), store, title="t")
    assert SanitizedProcedure.from_dict(json.loads(json.dumps(result.to_dict()))) == result


def test_category_validated():
    with pytest.raises(ValueError):
        SanitizedProcedure("a", "a", "maybe")
