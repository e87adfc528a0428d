"""Chapters, bookmarks, tags, canonical/exploratory flags, and floating notes.

Chapter membership is computed, never stored: a node belongs to the chapter
of the closest active-parent ancestor (itself included) that is a chapter
root, so reparenting and splitting stay correct by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .errors import AnnotationError
from .graph import FLAG_CANONICAL, FLAG_EXPLORATORY, VALID_FLAGS

if TYPE_CHECKING:
    from .graph import Document, NodeId


@dataclass
class Chapter:
    id: str
    title: str
    root_node: NodeId


@dataclass
class FloatingNote:
    """Free text visible globally (scope None) or within a node's subtree."""

    id: str
    title: str
    body: str
    scope: NodeId | None = None
    created_at: int = 0


@dataclass
class AnnotationSet:
    """All annotation state carried by a document."""

    chapters: dict[str, Chapter] = field(default_factory=dict)
    bookmarks: dict[str, NodeId] = field(default_factory=dict)
    tags: dict[str, set[NodeId]] = field(default_factory=dict)
    notes: dict[str, FloatingNote] = field(default_factory=dict)


# -- chapters ---------------------------------------------------------------


def create_chapter(doc: Document, node_id: NodeId, title: str) -> Chapter:
    """Make ``node_id`` the root of a new chapter."""
    doc.node(node_id)
    if any(c.root_node == node_id for c in doc.annotations.chapters.values()):
        raise AnnotationError(f"node {node_id} is already a chapter root")
    chapter = Chapter(id=doc._new_id(), title=title, root_node=node_id)
    doc.annotations.chapters[chapter.id] = chapter
    doc.touch()
    return chapter


def chapter_of(doc: Document, node_id: NodeId) -> Chapter | None:
    """Chapter of the closest ancestor (itself included) that roots a chapter."""
    doc.node(node_id)
    by_root = {c.root_node: c for c in doc.annotations.chapters.values()}
    cursor: NodeId | None = node_id
    while cursor is not None:
        if cursor in by_root:
            return by_root[cursor]
        cursor = doc.nodes[cursor].active_parent
    return None


def chapter_members(doc: Document, chapter_id: str) -> set[NodeId]:
    """All nodes whose computed chapter is this one."""
    if chapter_id not in doc.annotations.chapters:
        raise AnnotationError(f"unknown chapter id: {chapter_id}")
    return {
        nid
        for nid in doc.nodes
        if (found := chapter_of(doc, nid)) is not None and found.id == chapter_id
    }


# -- flags -------------------------------------------------------------------


def set_flag(doc: Document, node_id: NodeId, flag: str, on: bool) -> None:
    """Set or clear a node flag.

    Canonical and exploratory are mutually exclusive. Marking a node
    canonical marks its whole active ancestry canonical: a canonical
    history is a full path back to the root.
    """
    if flag not in VALID_FLAGS:
        raise AnnotationError(f"unknown flag: {flag}")
    node = doc.node(node_id)
    if not on:
        node.flags.discard(flag)
        doc.touch()
        return
    if flag == FLAG_CANONICAL:
        for nid in doc.ancestry(node_id):
            ancestor = doc.nodes[nid]
            ancestor.flags.add(FLAG_CANONICAL)
            ancestor.flags.discard(FLAG_EXPLORATORY)
    elif flag == FLAG_EXPLORATORY:
        node.flags.add(FLAG_EXPLORATORY)
        node.flags.discard(FLAG_CANONICAL)
    else:
        node.flags.add(flag)
    doc.touch()


# -- floating notes -----------------------------------------------------------


def add_note(
    doc: Document, title: str, body: str, scope: NodeId | None = None
) -> FloatingNote:
    """Create a floating note, global by default or scoped to a subtree."""
    if scope is not None:
        doc.node(scope)
    note = FloatingNote(
        id=doc._new_id(), title=title, body=body, scope=scope, created_at=doc.tick_created()
    )
    doc.annotations.notes[note.id] = note
    doc.touch()
    return note


def remove_note(doc: Document, note_id: str) -> None:
    if note_id not in doc.annotations.notes:
        raise AnnotationError(f"unknown note id: {note_id}")
    del doc.annotations.notes[note_id]
    doc.touch()


def notes_visible_at(doc: Document, node_id: NodeId) -> list[FloatingNote]:
    """Global notes plus notes scoped to an active-parent ancestor of the node.

    Ordered globals first, then scoped, each by creation time.
    """
    lineage = set(doc.ancestry(node_id))
    notes = doc.annotations.notes.values()
    global_notes = [n for n in notes if n.scope is None]
    scoped = [n for n in notes if n.scope is not None and n.scope in lineage]
    key = lambda n: n.created_at
    return sorted(global_notes, key=key) + sorted(scoped, key=key)


# -- bookmarks and tags --------------------------------------------------------


def set_bookmark(doc: Document, name: str, node_id: NodeId) -> None:
    """Point a bookmark name at a node; names are unique, so this overwrites."""
    doc.node(node_id)
    doc.annotations.bookmarks[name] = node_id
    doc.touch()


def remove_bookmark(doc: Document, name: str) -> None:
    if name not in doc.annotations.bookmarks:
        raise AnnotationError(f"unknown bookmark: {name!r}")
    del doc.annotations.bookmarks[name]
    doc.touch()


def resolve_bookmark(doc: Document, name: str) -> NodeId:
    try:
        return doc.annotations.bookmarks[name]
    except KeyError:
        raise AnnotationError(f"unknown bookmark: {name!r}") from None


def tag_node(doc: Document, node_id: NodeId, name: str) -> None:
    doc.node(node_id)
    doc.annotations.tags.setdefault(name, set()).add(node_id)
    doc.touch()


def untag_node(doc: Document, node_id: NodeId, name: str) -> None:
    if name not in doc.annotations.tags:
        raise AnnotationError(f"unknown tag: {name!r}")
    doc.annotations.tags[name].discard(node_id)
    doc.touch()


def resolve_tag(doc: Document, name: str) -> set[NodeId]:
    try:
        return set(doc.annotations.tags[name])
    except KeyError:
        raise AnnotationError(f"unknown tag: {name!r}") from None
