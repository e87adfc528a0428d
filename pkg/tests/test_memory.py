from __future__ import annotations

import random

import pytest

import loom
from loom import memory as mem

from conftest import TEXT_POOL, grow_random_tree
from oracles import score_memory


def test_entry_retrievable_by_key(doc, m1):
    entry = mem.save_entry(doc, "The mentor is secretly the king.", keys={"mentor", "king"})
    hits = mem.retrieve(doc, "we asked the mentor", k=3, at=doc.root)
    assert [e.id for e in hits] == [entry.id]


def test_auto_keys_drop_stopwords(doc, m1):
    entry = mem.save_entry(doc, "Captain Vane buried the chest on Skye")
    assert {"vane", "chest", "skye"} <= entry.keys
    assert not ({"the", "on"} & entry.keys)


def test_scoped_entry_invisible_to_sibling(doc, m1):
    b = doc.create_child(doc.root, "b")
    sibling = doc.create_child(doc.root, "s")
    below = doc.create_child(b, "x")
    mem.save_entry(doc, "dragon guards the pass", scope=b)
    assert mem.retrieve(doc, "the dragon", k=3, at=below)
    assert mem.retrieve(doc, "the dragon", k=3, at=b)
    assert not mem.retrieve(doc, "the dragon", k=3, at=sibling)


def test_overlap_beats_unrelated(doc):
    hit = mem.save_entry(doc, "note about the mentor", keys={"mentor"})
    mem.save_entry(doc, "grocery list", keys={"grocery"})
    ranked = mem.retrieve(doc, "talking to the mentor now", k=5, at=doc.root)
    assert [e.id for e in ranked] == [hit.id]


def test_equal_overlap_newer_wins(doc):
    old = mem.save_entry(doc, "first fact", keys={"fact"})
    new = mem.save_entry(doc, "second fact", keys={"fact"})
    ranked = mem.retrieve(doc, "a fact appears", k=2, at=doc.root)
    assert [e.id for e in ranked] == [new.id, old.id]


def test_ranking_matches_brute_force_scorer():
    rng = random.Random(77)
    doc = loom.new_document("r", id_seed=77)
    grow_random_tree(doc, rng, 40)
    ids = list(doc.nodes)
    vocab = ["mentor", "king", "chest", "skye", "storm", "door", "wind", "lamp"]
    for i in range(100):
        keys = set(rng.sample(vocab, rng.randint(1, 3)))
        scope = rng.choice(ids) if rng.random() < 0.5 else None
        mem.save_entry(doc, f"fact {i}: " + " ".join(keys), keys=keys, scope=scope)
    tail = "the mentor took the chest through the storm to the door"
    for at in rng.sample(ids, 10):
        got = [e.id for e in mem.retrieve(doc, tail, k=100, at=at)]
        assert got == score_memory(doc, tail, at)


def test_empty_store_gives_pure_ancestry(doc, m1):
    a = doc.create_child(doc.root, "bcd")
    bundle = mem.build_context(doc, a, budget_tokens=64, memory_k=3, provider=m1)
    assert bundle.preamble == ""
    assert bundle.text == "abcd"
    assert bundle.token_estimate <= 64


def test_story_is_exact_suffix_under_budget(m1):
    doc = loom.new_document("", id_seed=2)
    cursor = doc.root
    for _ in range(12):
        cursor = doc.create_child(cursor, "abcdefgh")
    full = loom.read_view(doc, cursor)
    bundle = mem.build_context(doc, cursor, budget_tokens=40, memory_k=0, provider=m1)
    assert bundle.story
    assert full.endswith(bundle.story)
    assert bundle.token_estimate <= 40


def test_adding_entry_changes_only_preamble(doc, m1):
    cursor = doc.root
    for _ in range(20):
        cursor = doc.create_child(cursor, "abcdefg ")
    mem.save_entry(doc, "the mentor waits", keys={"mentor", "abcdefg"})
    first = mem.build_context(doc, cursor, budget_tokens=80, memory_k=4, provider=m1)
    mem.save_entry(doc, "the king sleeps", keys={"king", "abcdefg"})
    second = mem.build_context(doc, cursor, budget_tokens=80, memory_k=4, provider=m1)
    assert first.story == second.story
    assert first.preamble != second.preamble


def test_preamble_drops_whole_entries(doc, m1):
    giant = "x" * 500
    mem.save_entry(doc, giant, keys={"abcdefg", "xx"})
    small = mem.save_entry(doc, "tiny fact", keys={"abcdefg", "fact"})
    cursor = doc.root
    for _ in range(4):
        cursor = doc.create_child(cursor, "abcdefg ")
    # ranked giant-first would blow the preamble share; it must be dropped whole
    mem.save_entry(doc, giant + " again", keys={"abcdefg", "xx"})
    bundle = mem.build_context(doc, cursor, budget_tokens=100, memory_k=5, provider=m1)
    assert "x" * 40 not in bundle.preamble
    assert bundle.preamble.startswith(mem.MEMORY_HEADER)
    assert bundle.token_estimate <= 100


def test_build_context_deterministic(doc, m1):
    mem.save_entry(doc, "the mentor waits", keys={"mentor"})
    a = doc.create_child(doc.root, "the mentor arrives")
    one = mem.build_context(doc, a, budget_tokens=64, memory_k=2, provider=m1)
    two = mem.build_context(doc, a, budget_tokens=64, memory_k=2, provider=m1)
    assert one == two


def test_budget_precondition(doc, m1):
    with pytest.raises(ValueError):
        mem.build_context(doc, doc.root, budget_tokens=8, memory_k=1, provider=m1)


def test_estimate_never_exceeds_budget_fuzz(m1):
    rng = random.Random(5)
    doc = loom.new_document("r", id_seed=5)
    grow_random_tree(doc, rng, 60)
    ids = list(doc.nodes)
    for i in range(20):
        mem.save_entry(
            doc, rng.choice(TEXT_POOL) + f" fact{i}",
            scope=rng.choice(ids) if rng.random() < 0.5 else None,
        )
    for _ in range(80):
        node = rng.choice(ids)
        budget = rng.randint(16, 300)
        bundle = mem.build_context(doc, node, budget, rng.randint(0, 4), m1)
        assert bundle.token_estimate <= budget
        full = loom.read_view(doc, node)
        assert full.endswith(bundle.story)


def test_rejects_empty_text_and_bad_scope(doc):
    with pytest.raises(loom.LoomError):
        mem.save_entry(doc, "")
    with pytest.raises(loom.NodeNotFound):
        mem.save_entry(doc, "text", scope="missing")
