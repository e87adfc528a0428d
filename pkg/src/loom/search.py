"""Scoped text search, read-view assembly, and linear export.

Search is a plain substring scan (optionally case-folded) over one of four
scope sets: the whole document, a node's subtree, a node's ancestry, or
the union of both. Results come back in a stable document order: active
depth, then sibling position along the path, then offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import LoomError

if TYPE_CHECKING:
    from .graph import Document, NodeId

SCOPE_KINDS = ("all", "subtree", "ancestry", "subtree+ancestry")
SNIPPET_RADIUS = 30


@dataclass(frozen=True)
class SearchScope:
    kind: str = "all"
    node: NodeId | None = None

    def __post_init__(self):
        if self.kind not in SCOPE_KINDS:
            raise LoomError(f"unknown search scope kind: {self.kind!r}")
        if self.kind != "all" and self.node is None:
            raise LoomError(f"scope {self.kind!r} requires a node")


@dataclass(frozen=True)
class Match:
    node: NodeId
    start: int
    end: int
    snippet: str


def scope_nodes(doc: Document, scope: SearchScope) -> set[NodeId]:
    """The node set a scope denotes; "and/or" scopes are the union."""
    if scope.kind == "all":
        return set(doc.nodes)
    assert scope.node is not None
    if scope.kind == "subtree":
        return doc.subtree(scope.node)
    if scope.kind == "ancestry":
        return set(doc.ancestry(scope.node))
    return doc.subtree(scope.node) | set(doc.ancestry(scope.node))


def _order_key(doc: Document, node_id: NodeId) -> tuple[int, tuple[int, ...]]:
    """(active depth, sibling index along the active path)."""
    path = doc.ancestry(node_id)
    indexes = []
    for parent, child in zip(path, path[1:]):
        indexes.append(doc.nodes[parent].children_order.index(child))
    return len(path) - 1, tuple(indexes)


def search(
    doc: Document,
    query: str,
    scope: SearchScope | None = None,
    case_sensitive: bool = False,
) -> list[Match]:
    """All occurrences of ``query`` within the scope's node texts.

    Case-insensitive matching lowercases both sides; offsets refer to the
    node text (assuming length-stable lowercasing, true for the scripts we
    target). Occurrences within one node do not overlap.
    """
    if not query:
        raise LoomError("search query cannot be empty")
    scope = scope or SearchScope()
    needle = query if case_sensitive else query.lower()
    matches: list[tuple[tuple[int, tuple[int, ...]], Match]] = []
    for nid in scope_nodes(doc, scope):
        text = doc.nodes[nid].text
        haystack = text if case_sensitive else text.lower()
        key = _order_key(doc, nid)
        start = 0
        while True:
            idx = haystack.find(needle, start)
            if idx == -1:
                break
            end = min(idx + len(needle), len(text))
            snippet = text[max(0, idx - SNIPPET_RADIUS) : min(len(text), end + SNIPPET_RADIUS)]
            matches.append((key, Match(node=nid, start=idx, end=end, snippet=snippet)))
            start = idx + len(needle)
    matches.sort(key=lambda pair: (pair[0], pair[1].start))
    return [m for _, m in matches]


def read_view(doc: Document, node_id: NodeId) -> str:
    """Single-history text: the node's ancestry concatenated, no separators."""
    return "".join(doc.nodes[nid].text for nid in doc.ancestry(node_id))


def export_linear(doc: Document, node_id: NodeId, include_chapters: bool = False) -> str:
    """Read-view text, optionally with a markdown heading at each chapter root."""
    if not include_chapters:
        return read_view(doc, node_id)
    by_root = {c.root_node: c for c in doc.annotations.chapters.values()}
    parts: list[str] = []
    for nid in doc.ancestry(node_id):
        chapter = by_root.get(nid)
        if chapter is not None:
            parts.append(f"## {chapter.title}\n")
        parts.append(doc.nodes[nid].text)
    return "".join(parts)
