from __future__ import annotations

import random

import pytest

import loom
from loom import annotations as ann
from loom import memory as mem

TEXT_POOL = [
    "Once upon a time ",
    "the door opened. ",
    "héllo wörld ",
    "🌲 deep in the forest ",
    "a b a b ",
    "it was a dark and stormy night. ",
    "申し訳ありません ",
    "the mentor smiled. ",
]


@pytest.fixture
def m1():
    return loom.TableProvider.m1()


@pytest.fixture
def doc():
    return loom.new_document("a", id_seed=11)


def grow_random_tree(doc, rng: random.Random, nodes: int) -> list[str]:
    """Attach ``nodes`` random children anywhere in the document."""
    ids = list(doc.nodes)
    for _ in range(nodes):
        parent = rng.choice(ids)
        ids.append(doc.create_child(parent, rng.choice(TEXT_POOL)))
    return ids


def eligible_for_merge(doc, node_id: str) -> bool:
    node = doc.nodes[node_id]
    if node_id == doc.root or len(node.parents) != 1:
        return False
    parent = doc.nodes[node.parents[0]]
    if parent.children_order != [node_id]:
        return False
    if node.parents[0] in node.children_order:
        return False
    chapter_roots = {c.root_node for c in doc.annotations.chapters.values()}
    return not (node.parents[0] in chapter_roots and node_id in chapter_roots)


def apply_random_mutation(doc, rng: random.Random) -> str | None:
    """One random valid topology mutation; returns the op name or None."""
    ids = list(doc.nodes)
    size = len(ids)
    weights = {
        "create": 0.42 if size < 250 else 0.15,
        "split": 0.16,
        "merge": 0.12,
        "reparent": 0.2,
        "delete": 0.1 if size < 250 else 0.37,
    }
    op = rng.choices(list(weights), weights=list(weights.values()))[0]

    if op == "create":
        doc.create_child(rng.choice(ids), rng.choice(TEXT_POOL))
        return "create"

    if op == "split":
        candidates = [n for n in ids if len(doc.nodes[n].text) >= 2]
        if not candidates:
            return None
        target = rng.choice(candidates)
        doc.split_node(target, rng.randrange(1, len(doc.nodes[target].text)))
        return "split"

    if op == "merge":
        candidates = [n for n in ids if eligible_for_merge(doc, n)]
        if not candidates:
            return None
        doc.merge_with_parent(rng.choice(candidates))
        return "merge"

    if op == "reparent":
        movable = [n for n in ids if n != doc.root]
        if not movable:
            return None
        node_id = rng.choice(movable)
        node = doc.nodes[node_id]
        add = [
            n
            for n in rng.sample(ids, min(2, len(ids)))
            if n != node_id and n not in node.parents
        ][: rng.randint(0, 2)]
        removable = [p for p in node.parents if rng.random() < 0.3]
        result = [p for p in node.parents if p not in removable] + add
        if not result:
            return None
        new_active = rng.choice(result)
        try:
            doc.reparent(node_id, add, removable, new_active)
            return "reparent"
        except loom.TopologyError:
            return None  # picked an active-parent cycle; skip

    if op == "delete":
        victims = [n for n in ids if n != doc.root]
        if not victims:
            return None
        doc.delete_subtree(rng.choice(victims))
        return "delete"

    return None


def sprinkle_annotations(doc, rng: random.Random) -> None:
    """Attach a light layer of annotations and memory to random nodes."""
    ids = list(doc.nodes)
    node = rng.choice(ids)
    kind = rng.randrange(5)
    if kind == 0:
        if not any(c.root_node == node for c in doc.annotations.chapters.values()):
            ann.create_chapter(doc, node, f"ch-{rng.randrange(1000)}")
    elif kind == 1:
        ann.set_bookmark(doc, f"bm-{rng.randrange(40)}", node)
    elif kind == 2:
        ann.tag_node(doc, node, f"tag-{rng.randrange(10)}")
    elif kind == 3:
        scope = node if rng.random() < 0.7 else None
        ann.add_note(doc, f"note-{rng.randrange(1000)}", rng.choice(TEXT_POOL), scope)
    else:
        scope = node if rng.random() < 0.5 else None
        mem.save_entry(doc, rng.choice(TEXT_POOL) + f"fact {rng.randrange(100)}", scope=scope)


def build_fuzz_document(seed: int, mutations: int = 120, annotated: bool = True):
    """A document shaped by random valid mutations (and annotations)."""
    rng = random.Random(seed)
    doc = loom.new_document(rng.choice(TEXT_POOL), id_seed=seed)
    grow_random_tree(doc, rng, 12)
    applied = 0
    while applied < mutations:
        if annotated and rng.random() < 0.12:
            sprinkle_annotations(doc, rng)
        if apply_random_mutation(doc, rng) is not None:
            applied += 1
    return doc
