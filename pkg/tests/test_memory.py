from __future__ import annotations

import json
import threading
from importlib import resources

import numpy as np
import pytest

from helpers import brute_force_ranking
from xdlforge.llm import Gateway, ScriptedBackend
from xdlforge.memory import (
    AmbiguityEntry,
    DimensionMismatch,
    DuplicateRecord,
    Labbook,
    LabbookEntry,
    StorageError,
    VectorRecord,
    VectorStore,
    XdlPair,
    add_ambiguity,
    add_xdl_pair,
    load_ambiguities,
    load_pairs,
    open_store,
    seed_xdl_db,
    validated_pairs,
)

DEMO = resources.files("xdlforge").joinpath("data/demo")


def rec(i, vec, ns="documents", **meta):
    return VectorRecord(f"r{i}", ns, f"text {i}", np.asarray(vec, dtype=float), {k: str(v) for k, v in meta.items()})


def test_self_query_rank_one(tmp_path):
    s = VectorStore(tmp_path, default_dim=4)
    s.upsert(rec(0, [1, 2, 3, 4]))
    s.upsert(rec(1, [4, 3, 2, 1]))
    hit = s.query([1, 2, 3, 4], 1, "documents")[0]
    assert hit.record.id == "r0" and hit.rank == 1 and hit.score == pytest.approx(1.0)


def test_dimension_mismatch(tmp_path):
    s = VectorStore(tmp_path, default_dim=4)
    with pytest.raises(DimensionMismatch):
        s.upsert(rec(0, [1, 2, 3]))
    s.upsert(rec(0, [1, 2, 3, 4]))
    with pytest.raises(DimensionMismatch):
        s.query([1, 2], 1, "documents")


def test_idempotent_upsert(tmp_path):
    s = VectorStore(tmp_path, default_dim=2)
    assert s.upsert(rec(0, [1, 0])) == s.upsert(rec(0, [1, 0])) == "r0"
    assert s.count("documents") == 1
    with pytest.raises(DuplicateRecord):
        s.upsert(VectorRecord("r0", "documents", "other", np.array([1.0, 0.0])))


def test_orthogonal_probe(tmp_path):
    s = VectorStore(tmp_path, default_dim=2)
    s.upsert(rec(0, [1, 0]))
    hit = s.query([0, 1], 1, "documents")[0]
    assert hit.rank == 1 and hit.score == 0.0


def test_bad_inputs(tmp_path):
    s = VectorStore(tmp_path, default_dim=2)
    with pytest.raises(StorageError):
        s.upsert(rec(0, [np.nan, 1]))
    with pytest.raises(StorageError):
        s.upsert(VectorRecord("x", "documents", "t", np.ones(2), {"n": 1}))
    with pytest.raises(ValueError):
        s.query([1, 0], 0, "documents")
    assert s.query([1, 0], 3, "empty") == []


def test_persistence_and_reload(tmp_path):
    s = VectorStore(tmp_path, default_dim=3)
    s.upsert_many([rec(i, [i, 1, 2], tag=i % 2) for i in range(5)])
    again = VectorStore(tmp_path)
    assert again.dim("documents") == 3
    assert [r.id for r in again.records("documents")] == [f"r{i}" for i in range(5)]
    assert np.array_equal(again.get("documents", "r3").vector, np.array([3.0, 1.0, 2.0]))


def test_corrupt_store_detected(tmp_path):
    s = VectorStore(tmp_path, default_dim=3)
    s.upsert(rec(0, [1, 2, 3]))
    with open(tmp_path / "documents.f64", "ab") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(StorageError):
        VectorStore(tmp_path)


def test_where_filter(tmp_path):
    s = VectorStore(tmp_path, default_dim=2)
    s.upsert_many([rec(0, [1, 0], ok="no"), rec(1, [0.9, 0.1], ok="yes"), rec(2, [0, 1], ok="yes")])
    assert [h.record.id for h in s.query([1, 0], 5, "documents", where={"ok": "yes"})] == ["r1", "r2"]
    assert [h.record.id for h in s.query([1, 0], 5, "documents", where=lambda r: r.id != "r1")] == ["r0", "r2"]


def test_ties_keep_insertion_order(tmp_path):
    s = VectorStore(tmp_path, default_dim=2)
    s.upsert_many([rec(i, [1, 1]) for i in range(4)])
    assert [h.record.id for h in s.query([1, 1], 4, "documents")] == ["r0", "r1", "r2", "r3"]


@pytest.mark.parametrize("seed", range(3))
def test_query_matches_brute_force_200(tmp_path, seed):
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(200, 16))
    s = VectorStore(tmp_path, default_dim=16)
    s.upsert_many([rec(i, v) for i, v in enumerate(vectors)])
    for _ in range(10):
        probe = rng.normal(size=16)
        got = [(int(h.record.id[1:]), h.score) for h in s.query(probe, 10, "documents")]
        want = brute_force_ranking(vectors, probe, 10)
        assert [i for i, _ in got] == [i for i, _ in want]
        assert np.allclose([x for _, x in got], [x for _, x in want])


def test_concurrent_upserts(tmp_path):
    s = VectorStore(tmp_path, default_dim=2)

    def work(base):
        for i in range(20):
            s.upsert(rec(base + i, [base + i + 1, 1]))

    threads = [threading.Thread(target=work, args=(b,)) for b in (0, 100, 200)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert s.count("documents") == 60
    assert VectorStore(tmp_path).count("documents") == 60


def test_seed_pairs_from_shipped_corpus(store, offline_gateway):
    pairs = load_pairs(DEMO.joinpath("seed_pairs.jsonl"))
    inserted, errors = seed_xdl_db(store, offline_gateway, pairs)
    assert (inserted, errors) == (10, [])
    assert len(validated_pairs(store)) == 10
    assert seed_xdl_db(store, offline_gateway, pairs) == (0, [])


def test_seed_skips_broken_pair(store, offline_gateway):
    good = load_pairs(DEMO.joinpath("seed_pairs.jsonl"))[0]
    broken = XdlPair("do something", "<Synthesis><Procedure><Boil/></Procedure></Synthesis>", title="broken")
    inserted, errors = seed_xdl_db(store, offline_gateway, [broken, good])
    assert inserted == 1 and len(errors) == 1 and "broken" in errors[0]
    assert seed_xdl_db(store, offline_gateway, []) == (0, [])


def test_rag_k5_and_validated_gate(store, offline_gateway):
    pairs = load_pairs(DEMO.joinpath("seed_pairs.jsonl"))
    seed_xdl_db(store, offline_gateway, pairs)
    unvalidated = XdlPair(pairs[0].procedure_text + " (draft)", pairs[0].xdl_text, "pipeline", False, "draft")
    add_xdl_pair(store, offline_gateway, unvalidated)
    probe = offline_gateway.embed_one(pairs[0].procedure_text, store.dim("xdl_pairs"))
    hits = store.query(probe, 5, "xdl_pairs", where={"validated": "true"})
    assert len(hits) == 5
    assert hits[0].record.text == pairs[0].procedure_text and hits[0].score == pytest.approx(1.0)
    assert all(h.record.metadata["validated"] == "true" for h in hits)


def test_ambiguities_round_trip(store, offline_gateway):
    entries = load_ambiguities(DEMO.joinpath("seed_ambiguities.jsonl"))
    assert len(entries) == 8
    for e in entries:
        add_ambiguity(store, offline_gateway, e)
    assert store.count("ambiguities") == 8
    with pytest.raises(ValueError):
        AmbiguityEntry(" ", "x")


def test_labbook_append_and_read(tmp_path):
    book = Labbook(tmp_path / "lab.jsonl", epoch=0)
    book.append(LabbookEntry("doc", "A", category="executable"))
    book.append({"document": "doc", "title": "B"})
    raw = (tmp_path / "lab.jsonl").read_bytes()
    entries = book.read()
    assert [e["id"] for e in entries] == ["entry-00001", "entry-00002"]
    assert entries[0]["created"] == "1970-01-01T00:00:00+00:00"
    assert [e["title"] for e in book.read(title="B")] == ["B"]
    assert book.read(category="executable")[0]["title"] == "A"
    again = Labbook(tmp_path / "lab2.jsonl", epoch=0)
    again.append(LabbookEntry("doc", "A", category="executable"))
    again.append({"document": "doc", "title": "B"})
    assert (tmp_path / "lab2.jsonl").read_bytes() == raw


def test_labbook_hundred_entries_in_order(tmp_path):
    book = Labbook(tmp_path / "lab.jsonl", epoch=0)
    for i in range(100):
        book.append(LabbookEntry("doc", f"P{i:03d}"))
    titles = [e["title"] for e in book.read()]
    assert titles == [f"P{i:03d}" for i in range(100)]
    for line in (tmp_path / "lab.jsonl").read_text().splitlines():
        assert list(json.loads(line)) == sorted(json.loads(line))


def test_open_store_creates_namespaces(tmp_path):
    s = open_store(tmp_path / "s", default_dim=8)
    assert s.namespaces() == ["ambiguities", "documents", "flagged_steps", "xdl_pairs"]


def test_embedder_and_store_agree_on_dim(store):
    gw = Gateway(ScriptedBackend(), embed_dim=store.dim("documents"))
    vec = gw.embed_one("text")
    store.upsert(VectorRecord("x", "documents", "text", vec))
    assert store.query(vec, 1, "documents")[0].score == pytest.approx(1.0)
