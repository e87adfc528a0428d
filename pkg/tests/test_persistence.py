from __future__ import annotations

import json
import random

import pytest

import loom
from loom.persistence import (
    Autosaver,
    canonical_dumps,
    document_to_payload,
    load,
    loads,
    save,
)

from conftest import build_fuzz_document, grow_random_tree


def test_empty_document_round_trips(tmp_path):
    doc = loom.new_document("")
    path = tmp_path / "empty.loom.json"
    save(doc, path)
    back = load(path)
    assert document_to_payload(back) == document_to_payload(doc)


def test_structural_round_trip_and_byte_fixed_point(tmp_path):
    rng = random.Random(500)
    doc = loom.new_document("r", id_seed=500)
    grow_random_tree(doc, rng, 499)
    loom.create_chapter(doc, doc.root, "I")
    loom.set_bookmark(doc, "b", doc.root)
    loom.save_entry(doc, "the mentor waits", keys={"mentor"})
    loom.add_note(doc, "n", "body")

    path = tmp_path / "doc.loom.json"
    save(doc, path)
    loaded = load(path)
    assert document_to_payload(loaded) == document_to_payload(doc)

    again = tmp_path / "again.loom.json"
    save(loaded, again)
    assert path.read_bytes() == again.read_bytes()


def test_gzip_by_extension(tmp_path):
    doc = loom.new_document("compressed")
    path = tmp_path / "doc.loom.json.gz"
    save(doc, path)
    assert path.read_bytes()[:2] == b"\x1f\x8b"
    back = load(path)
    assert back.nodes[back.root].text == "compressed"


def test_corrupt_file_names_offending_node(tmp_path):
    doc = loom.new_document("r")
    child = doc.create_child(doc.root, "x")
    raw = json.loads(canonical_dumps(doc))
    raw["document"]["nodes"][child]["parents"] = ["missingparent"]
    path = tmp_path / "bad.loom.json"
    path.write_text(json.dumps(raw))
    with pytest.raises(loom.PersistenceError) as err:
        load(path)
    assert child in str(err.value) or "missingparent" in str(err.value)


def test_newer_version_rejected():
    doc = loom.new_document("r")
    raw = json.loads(canonical_dumps(doc))
    raw["format_version"] = 99
    with pytest.raises(loom.PersistenceError, match="newer"):
        loads(json.dumps(raw))


def test_unversioned_old_file_needs_migration():
    doc = loom.new_document("r")
    raw = json.loads(canonical_dumps(doc))
    raw["format_version"] = 0
    with pytest.raises(loom.PersistenceError, match="migration"):
        loads(json.dumps(raw))


def test_unknown_future_fields_survive_round_trip():
    doc = loom.new_document("r")
    raw = json.loads(canonical_dumps(doc, saved_at="t"))
    raw["future_envelope_field"] = {"x": 1}
    raw["document"]["future_doc_field"] = [1, 2, 3]
    text = json.dumps(raw)
    reloaded = loads(text)
    out = json.loads(canonical_dumps(reloaded, saved_at="t"))
    assert out["future_envelope_field"] == {"x": 1}
    assert out["document"]["future_doc_field"] == [1, 2, 3]


def test_saved_at_stable_until_mutation(tmp_path):
    doc = loom.new_document("r")
    path = tmp_path / "x.loom.json"
    save(doc, path, saved_at="2026-01-01T00:00:00Z")
    loaded = load(path)
    assert canonical_dumps(loaded) == canonical_dumps(loaded)
    save(loaded, path)
    assert json.loads(path.read_text())["saved_at"] == "2026-01-01T00:00:00Z"
    loaded.create_child(loaded.root, "mutation")
    save(loaded, path)
    assert json.loads(path.read_text())["saved_at"] != "2026-01-01T00:00:00Z"


def test_secrets_never_reach_disk(tmp_path, monkeypatch):
    secret = "super-secret-token-value-123"
    monkeypatch.setenv("LOOM_TOKEN_TEST", secret)
    doc = loom.new_document("r")
    doc.provider_config = loom.ProviderConfig(
        kind="remote", base_url="https://lm.example", model="m", auth_env="LOOM_TOKEN_TEST"
    )
    path = tmp_path / "doc.loom.json"
    save(doc, path)
    text = path.read_text()
    assert secret not in text
    assert "LOOM_TOKEN_TEST" in text  # the variable *name* is part of the config
    back = load(path)
    assert back.provider_config.auth_env == "LOOM_TOKEN_TEST"


def test_fuzz_documents_round_trip():
    for seed in range(6):
        doc = build_fuzz_document(seed, mutations=60)
        reloaded = loads(canonical_dumps(doc, saved_at="t"))
        assert document_to_payload(reloaded) == document_to_payload(doc)
        assert canonical_dumps(reloaded, saved_at="t") == canonical_dumps(doc, saved_at="t")


def test_autosave_skips_when_clean(tmp_path):
    doc = loom.new_document("r")
    saver = Autosaver(tmp_path, keep=5)
    assert saver.tick(doc) is None
    assert list(tmp_path.glob("*.loom.json")) == []


def test_autosave_ring_buffer(tmp_path):
    doc = loom.new_document("r")
    saver = Autosaver(tmp_path, keep=20)
    assert saver.tick(doc) is None  # clean document, no snapshot
    written = []
    for i in range(25):
        doc.create_child(doc.root, f"n{i}")
        path = saver.tick(doc)
        assert path is not None
        written.append(path)
    assert saver.tick(doc) is None  # no mutation since last tick
    remaining = sorted(tmp_path.glob("snapshot-*.loom.json"))
    assert len(remaining) == 20
    assert remaining == sorted(written[-20:])


def test_autosave_snapshot_equals_live_document(tmp_path):
    doc = loom.new_document("r")
    saver = Autosaver(tmp_path, keep=3)
    doc.create_child(doc.root, "state one")
    snap = saver.tick(doc)
    frozen = document_to_payload(doc)
    doc.create_child(doc.root, "state two")
    assert document_to_payload(load(snap)) == frozen
