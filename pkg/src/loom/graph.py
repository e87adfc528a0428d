"""Core multiverse graph: nodes, edges, and topology mutations.

A document is a directed graph of text fragments. Child edges may form
cycles and nodes may have several parents, but every non-root node keeps
exactly one *active* parent, and the active-parent edges always form a
tree rooted at the root node. All path-like reads (ancestry, read view)
follow the active tree only, so they terminate on any topology.

Documents are not thread-safe by themselves; concurrent writers must
serialize mutations (the HTTP service does this with a per-document
single-writer lock).
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable

from .errors import InvariantViolation, NodeNotFound, TopologyError

if TYPE_CHECKING:  # avoid import cycles; these are layered on top of the graph
    from .annotations import AnnotationSet
    from .memory import MemoryEntry
    from .providers import ProviderConfig
    from .tools import PromptTemplate

NodeId = str

FLAG_CANONICAL = "canonical"
FLAG_EXPLORATORY = "exploratory"
FLAG_COLLAPSED = "collapsed"
VALID_FLAGS = frozenset({FLAG_CANONICAL, FLAG_EXPLORATORY, FLAG_COLLAPSED})

_ID_LENGTH = 12
_HEX = "0123456789abcdef"


@dataclass
class GenMeta:
    """How a node's text was generated: provider, params, per-token logprobs."""

    provider: str
    params: dict[str, Any] = field(default_factory=dict)
    tokens: list[str] = field(default_factory=list)
    logprobs: list[float] = field(default_factory=list)


@dataclass
class Node:
    """One text fragment; a vertex of the multiverse.

    ``parents`` is ordered and duplicate-free. ``active_parent`` is None
    only for the root. ``children_order`` lists exactly the nodes that
    name this node among their parents, in author-controlled order.
    """

    id: NodeId
    text: str
    parents: list[NodeId] = field(default_factory=list)
    active_parent: NodeId | None = None
    children_order: list[NodeId] = field(default_factory=list)
    flags: set[str] = field(default_factory=set)
    gen_meta: GenMeta | None = None


class Document:
    """The whole multiverse: node map plus the layers built on it.

    Annotation, memory, and template containers live here so that
    referential integrity can be maintained by the topology mutations,
    but their behavior is owned by the corresponding modules.
    """

    def __init__(self, root_text: str = "", *, id_seed: int | None = None):
        from .annotations import AnnotationSet  # runtime import; no cycle back

        if id_seed is None:
            id_seed = random.SystemRandom().getrandbits(64)
        self._id_rng = random.Random(id_seed)
        self._issued: set[NodeId] = set()

        root_id = self._new_id()
        self.root: NodeId = root_id
        self.nodes: dict[NodeId, Node] = {root_id: Node(id=root_id, text=root_text)}

        self.annotations: AnnotationSet = AnnotationSet()
        self.memory: list[MemoryEntry] = []
        self.templates: dict[str, PromptTemplate] = {}
        self.provider_config: ProviderConfig | None = None

        self.version: int = 1
        self.saved_at: str | None = None
        self.mutation_log: list[str] = []
        # session-local counters; mutation_seq drives autosave dirtiness,
        # _created_seq orders notes and memory entries deterministically
        self.mutation_seq: int = 0
        self._saved_seq: int = 0
        self._created_seq: int = 0
        # unknown fields from newer format versions, preserved on round-trip
        self.extra: dict[str, Any] = {}
        self.envelope_extra: dict[str, Any] = {}

    # -- id and counter plumbing ------------------------------------------

    def _new_id(self) -> NodeId:
        # ids are never reused, even after deletion
        while True:
            nid = "".join(self._id_rng.choice(_HEX) for _ in range(_ID_LENGTH))
            if nid not in self._issued:
                self._issued.add(nid)
                return nid

    def tick_created(self) -> int:
        """Next logical creation stamp (orders notes and memory entries)."""
        self._created_seq += 1
        return self._created_seq

    def note_created_floor(self, value: int) -> None:
        """Keep the creation counter ahead of stamps read from disk."""
        self._created_seq = max(self._created_seq, value)

    def touch(self) -> None:
        """Record that the document changed since the last save."""
        self.mutation_seq += 1

    @property
    def dirty(self) -> bool:
        return self.mutation_seq != self._saved_seq

    def mark_saved(self, saved_at: str) -> None:
        self.saved_at = saved_at
        self._saved_seq = self.mutation_seq

    # -- lookups -----------------------------------------------------------

    def node(self, node_id: NodeId) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NodeNotFound(node_id) from None

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def active_children(self, node_id: NodeId) -> list[NodeId]:
        """Children whose active parent is this node, in sibling order."""
        node = self.node(node_id)
        return [c for c in node.children_order if self.nodes[c].active_parent == node_id]

    # -- topology mutations --------------------------------------------------

    def create_child(self, parent: NodeId, text: str) -> NodeId:
        """Append a new leaf under ``parent``; new nodes start exploratory."""
        parent_node = self.node(parent)
        if not text:
            raise TopologyError("node text cannot be empty (only the root may be)")
        nid = self._new_id()
        self.nodes[nid] = Node(
            id=nid,
            text=text,
            parents=[parent],
            active_parent=parent,
            flags={FLAG_EXPLORATORY},
        )
        parent_node.children_order.append(nid)
        self.touch()
        return nid

    def set_text(self, node_id: NodeId, text: str) -> None:
        """Replace a node's text; non-root nodes must stay non-empty."""
        node = self.node(node_id)
        if not text and node_id != self.root:
            raise TopologyError("node text cannot be empty (only the root may be)")
        node.text = text
        node.gen_meta = None  # edited text no longer aligns with generated tokens
        self.touch()

    def split_node(self, node_id: NodeId, offset: int) -> tuple[NodeId, NodeId]:
        """Split a node at a codepoint offset into upper and lower halves.

        The upper half keeps the original id, parents, and text[:offset].
        The lower half takes text[offset:], the original children, and all
        annotations that referred to the node (the lower half carries the
        "present" those annotations pointed at). Generation metadata moves
        with the lower half; token alignment across a split is not preserved.
        """
        node = self.node(node_id)
        if not isinstance(offset, int) or not 0 < offset < len(node.text):
            raise TopologyError(
                f"split offset {offset!r} out of range for text of length {len(node.text)}"
            )
        lower_id = self._new_id()
        lower = Node(
            id=lower_id,
            text=node.text[offset:],
            parents=[node_id],
            active_parent=node_id,
            children_order=list(node.children_order),
            flags=set(node.flags),
            gen_meta=node.gen_meta,
        )
        node.text = node.text[:offset]
        node.gen_meta = None
        for cid in lower.children_order:
            child = self.nodes[cid]
            child.parents = [lower_id if p == node_id else p for p in child.parents]
            if child.active_parent == node_id:
                child.active_parent = lower_id
        node.children_order = [lower_id]
        self.nodes[lower_id] = lower
        self._move_annotations(node_id, lower_id)
        self.touch()
        return node_id, lower_id

    def merge_with_parent(self, node_id: NodeId) -> NodeId:
        """Fold a node into its sole parent, concatenating text.

        Inverse of split: the parent absorbs the node's text, children, and
        annotations, and the node is deleted.
        """
        node = self.node(node_id)
        if len(node.parents) != 1:
            raise TopologyError(f"cannot merge {node_id}: node has {len(node.parents)} parents")
        parent_id = node.parents[0]
        parent = self.node(parent_id)
        if parent.children_order != [node_id]:
            raise TopologyError(
                f"cannot merge {node_id}: parent {parent_id} has other children"
            )
        if parent_id in node.children_order:
            raise TopologyError(f"cannot merge {node_id}: would make {parent_id} its own parent")
        chapters = self.annotations.chapters
        if any(c.root_node == parent_id for c in chapters.values()) and any(
            c.root_node == node_id for c in chapters.values()
        ):
            raise TopologyError(
                f"cannot merge {node_id}: both halves are roots of distinct chapters"
            )

        parent.text = parent.text + node.text
        if parent.gen_meta is None:
            parent.gen_meta = node.gen_meta
        for cid in node.children_order:
            child = self.nodes[cid]
            child.parents = [parent_id if p == node_id else p for p in child.parents]
            if child.active_parent == node_id:
                child.active_parent = parent_id
        parent.children_order = list(node.children_order)
        del self.nodes[node_id]
        self._move_annotations(node_id, parent_id)
        self.touch()
        return parent_id

    def reparent(
        self,
        node_id: NodeId,
        add: Iterable[NodeId] = (),
        remove: Iterable[NodeId] = (),
        new_active: NodeId | None = None,
    ) -> None:
        """Rewire a node's parent set; child edges may form cycles.

        ``new_active`` left as None means "unchanged", which requires the
        current active parent to survive the edit. The active-parent edge
        set must stay acyclic.
        """
        node = self.node(node_id)
        if node_id == self.root:
            raise TopologyError("cannot reparent the root")
        add = list(add)
        remove = list(remove)
        for pid in add + remove:
            self.node(pid)
        if node_id in add:
            raise TopologyError(f"{node_id} cannot be its own parent")
        removed = set(remove)
        result = [p for p in node.parents if p not in removed]
        for pid in add:
            if pid in result or pid in node.parents:
                raise TopologyError(f"{pid} is already a parent of {node_id}")
            result.append(pid)
        if not result:
            raise TopologyError(f"reparent would leave {node_id} with no parents")

        active = node.active_parent if new_active is None else new_active
        if active not in result:
            raise TopologyError(
                f"active parent {active} not among resulting parents of {node_id}"
            )
        # the only active edge that changes is node's own, so a cycle exists
        # iff walking up from the candidate active parent reaches node
        cursor: NodeId | None = active
        steps = 0
        while cursor is not None:
            if cursor == node_id:
                raise TopologyError(
                    f"active parent {active} would create an active-parent cycle at {node_id}"
                )
            cursor = self.nodes[cursor].active_parent
            steps += 1
            if steps > len(self.nodes):
                raise InvariantViolation([f"active-parent walk did not terminate at {active}"])

        for pid in removed & set(node.parents):
            parent = self.nodes[pid]
            parent.children_order = [c for c in parent.children_order if c != node_id]
        for pid in add:
            self.nodes[pid].children_order.append(node_id)
        node.parents = result
        node.active_parent = active
        self.touch()

    def ancestry(self, node_id: NodeId) -> list[NodeId]:
        """Path root -> node along active-parent links."""
        node = self.node(node_id)
        path = [node.id]
        cursor = node.active_parent
        while cursor is not None:
            path.append(cursor)
            cursor = self.nodes[cursor].active_parent
            if len(path) > len(self.nodes):
                raise InvariantViolation([f"ancestry of {node_id} exceeds node count"])
        path.reverse()
        return path

    def subtree(self, node_id: NodeId, max_depth: int | None = None) -> set[NodeId]:
        """Breadth-first closure over child edges; cycle-safe; includes node."""
        self.node(node_id)
        seen = {node_id}
        frontier = deque([(node_id, 0)])
        while frontier:
            current, depth = frontier.popleft()
            if max_depth is not None and depth >= max_depth:
                continue
            for cid in self.nodes[current].children_order:
                if cid not in seen:
                    seen.add(cid)
                    frontier.append((cid, depth + 1))
        return seen

    def active_subtree(self, node_id: NodeId) -> set[NodeId]:
        """Nodes whose active ancestry passes through ``node_id``."""
        self.node(node_id)
        seen = {node_id}
        frontier = deque([node_id])
        while frontier:
            current = frontier.popleft()
            for cid in self.active_children(current):
                if cid not in seen:
                    seen.add(cid)
                    frontier.append(cid)
        return seen

    def delete_subtree(self, node_id: NodeId) -> int:
        """Delete a node and every node whose active history runs through it.

        Survivors that held a deleted node as a non-active parent lose that
        edge. Annotations referring to deleted nodes are removed; dropped
        bookmarks are noted in the mutation log.
        """
        if node_id == self.root:
            raise TopologyError("cannot delete the root")
        doomed = self.active_subtree(node_id)
        # a survivor can never have a doomed active parent: its active path
        # would then run through node_id, putting it in the doomed set
        for nid, node in self.nodes.items():
            if nid in doomed:
                continue
            if any(p in doomed for p in node.parents):
                node.parents = [p for p in node.parents if p not in doomed]
            if any(c in doomed for c in node.children_order):
                node.children_order = [c for c in node.children_order if c not in doomed]
        for nid in doomed:
            del self.nodes[nid]
        self._drop_annotation_refs(doomed)
        self.touch()
        return len(doomed)

    # -- annotation upkeep (behavior lives in annotations/memory modules) ----

    def _move_annotations(self, src: NodeId, dst: NodeId) -> None:
        ann = self.annotations
        for chapter in ann.chapters.values():
            if chapter.root_node == src:
                chapter.root_node = dst
        for name, target in ann.bookmarks.items():
            if target == src:
                ann.bookmarks[name] = dst
        for members in ann.tags.values():
            if src in members:
                members.discard(src)
                members.add(dst)
        for note in ann.notes.values():
            if note.scope == src:
                note.scope = dst
        for entry in self.memory:
            if entry.scope == src:
                entry.scope = dst

    def _drop_annotation_refs(self, gone: set[NodeId]) -> None:
        ann = self.annotations
        for cid in [c for c, ch in ann.chapters.items() if ch.root_node in gone]:
            del ann.chapters[cid]
        for name in [n for n, t in ann.bookmarks.items() if t in gone]:
            del ann.bookmarks[name]
            self.mutation_log.append(f"dropped bookmark {name!r}: target deleted")
        for members in ann.tags.values():
            members -= gone
        for nid in [n for n, note in ann.notes.items() if note.scope in gone]:
            del ann.notes[nid]
        self.memory = [e for e in self.memory if e.scope is None or e.scope not in gone]

    # -- integrity -------------------------------------------------------------

    def problems(self) -> list[str]:
        """Every invariant violation in the document, as readable strings."""
        out: list[str] = []
        if self.root not in self.nodes:
            return [f"root {self.root} missing from node map"]
        for nid, node in self.nodes.items():
            if node.id != nid:
                out.append(f"node {nid} carries mismatched id {node.id}")
            if nid == self.root:
                if node.parents:
                    out.append(f"root {nid} has parents {node.parents}")
                if node.active_parent is not None:
                    out.append(f"root {nid} has an active parent")
            else:
                if not node.parents:
                    out.append(f"node {nid} has no parents but is not the root")
                if node.active_parent is None:
                    out.append(f"node {nid} has no active parent")
                elif node.active_parent not in node.parents:
                    out.append(f"node {nid} active parent {node.active_parent} not in parents")
            if len(set(node.parents)) != len(node.parents):
                out.append(f"node {nid} lists a duplicate parent")
            if len(set(node.children_order)) != len(node.children_order):
                out.append(f"node {nid} lists a duplicate child")
            for pid in node.parents:
                if pid not in self.nodes:
                    out.append(f"node {nid} references missing parent {pid}")
            for cid in node.children_order:
                if cid not in self.nodes:
                    out.append(f"node {nid} references missing child {cid}")
            if not node.text and nid != self.root:
                out.append(f"node {nid} has empty text")
            if not node.flags <= VALID_FLAGS:
                out.append(f"node {nid} carries unknown flags {node.flags - VALID_FLAGS}")

        # children_order of P must be exactly the nodes naming P as a parent
        claims: dict[NodeId, set[NodeId]] = {nid: set() for nid in self.nodes}
        for cid, node in self.nodes.items():
            for pid in node.parents:
                if pid in claims:
                    claims[pid].add(cid)
        for nid, node in self.nodes.items():
            listed = set(node.children_order)
            if listed != claims[nid]:
                out.append(
                    f"node {nid} children_order {sorted(listed)} != parent claims "
                    f"{sorted(claims[nid])}"
                )

        reachable = self.subtree(self.root) if self.root in self.nodes else set()
        for nid in self.nodes:
            if nid not in reachable:
                out.append(f"node {nid} unreachable from root via child edges")

        # active-parent edges must form a tree rooted at root
        state: dict[NodeId, int] = {}  # 0 walking, 1 done
        for nid in self.nodes:
            path = []
            cursor: NodeId | None = nid
            while cursor is not None and state.get(cursor) != 1:
                if state.get(cursor) == 0:
                    out.append(f"active-parent cycle through {cursor}")
                    break
                state[cursor] = 0
                path.append(cursor)
                nxt = self.nodes[cursor].active_parent
                if nxt is not None and nxt not in self.nodes:
                    break  # already reported as missing reference
                cursor = nxt
            for p in path:
                state[p] = 1

        out.extend(self._annotation_problems())
        return out

    def _annotation_problems(self) -> list[str]:
        out: list[str] = []
        ann = self.annotations
        roots_seen: set[NodeId] = set()
        for cid, chapter in ann.chapters.items():
            if chapter.root_node not in self.nodes:
                out.append(f"chapter {cid} roots missing node {chapter.root_node}")
            if chapter.root_node in roots_seen:
                out.append(f"node {chapter.root_node} is the root of two chapters")
            roots_seen.add(chapter.root_node)
        for name, target in ann.bookmarks.items():
            if target not in self.nodes:
                out.append(f"bookmark {name!r} targets missing node {target}")
        for name, members in ann.tags.items():
            for m in members:
                if m not in self.nodes:
                    out.append(f"tag {name!r} includes missing node {m}")
        for nid, note in ann.notes.items():
            if note.scope is not None and note.scope not in self.nodes:
                out.append(f"note {nid} scoped to missing node {note.scope}")
        for entry in self.memory:
            if entry.scope is not None and entry.scope not in self.nodes:
                out.append(f"memory entry {entry.id} scoped to missing node {entry.scope}")
        return out

    def validate(self) -> None:
        """Raise InvariantViolation if any document invariant is broken."""
        problems = self.problems()
        if problems:
            raise InvariantViolation(problems)
