"""Context assembly within a token budget, plus keyed memory retrieval.

Generation context is the node's ancestry text, truncated from the left to
fit the provider's window, with retrieved memory entries injected as a
preamble of author notes. Retrieval is weighted term overlap: cheap, fully
deterministic, and indexable, with scoping identical to floating notes
(global, or visible within a node's active subtree).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import MemoryStoreError

if TYPE_CHECKING:
    from .graph import Document, NodeId
    from .providers import Provider

MEMORY_HEADER = "Background notes:"
# share of the effective budget reserved for the preamble whenever any
# entry is injected; fixed so the story suffix does not shift as entries
# come and go
MEMORY_BUDGET_SHARE = 2
RETRIEVAL_TAIL_CODEPOINTS = 2000
MAX_AUTO_KEYS = 8

STOPWORDS = frozenset(
    """a an and are as at be but by for from had has have he her his i if in into is
    it its me my no not of on or our she so that the their them they this to was we
    were what when where which who will with you your""".split()
)

_WORD_RE = re.compile(r"\w+", re.UNICODE)


def normalize_terms(text: str) -> list[str]:
    """Lowercased word tokens with stopwords and one-character terms dropped."""
    return [
        w
        for w in (m.group(0).lower() for m in _WORD_RE.finditer(text))
        if len(w) > 1 and w not in STOPWORDS
    ]


@dataclass
class MemoryEntry:
    """A saved snippet, retrievable by key terms, optionally subtree-scoped."""

    id: str
    text: str
    keys: set[str]
    scope: NodeId | None = None
    created_at: int = 0


@dataclass
class ContextBundle:
    """Assembled generation context: memory preamble plus story suffix."""

    preamble: str
    story: str
    token_estimate: int
    minimal: bool = False

    @property
    def text(self) -> str:
        return self.preamble + self.story


def _idf(term: str, entries: list[MemoryEntry]) -> float:
    df = sum(1 for e in entries if term in e.keys)
    return math.log((1 + len(entries)) / (1 + df)) + 1.0


def extract_keys(text: str, existing: list[MemoryEntry]) -> set[str]:
    """Most salient terms of a snippet: tf-idf against the current store."""
    terms = normalize_terms(text)
    if not terms:
        return set()
    tf: dict[str, int] = {}
    for t in terms:
        tf[t] = tf.get(t, 0) + 1
    scored = sorted(
        tf, key=lambda t: (-(tf[t] * _idf(t, existing)), t)
    )
    return set(scored[:MAX_AUTO_KEYS])


def save_entry(
    doc: Document,
    text: str,
    keys: set[str] | None = None,
    scope: NodeId | None = None,
) -> MemoryEntry:
    """Store a memory entry; keys are auto-extracted when not supplied."""
    if not text:
        raise MemoryStoreError("memory entry text cannot be empty")
    if scope is not None:
        doc.node(scope)
    if keys is None:
        keys = extract_keys(text, doc.memory)
    else:
        keys = {k.lower() for k in keys}
    if not keys:
        raise MemoryStoreError("memory entry has no usable key terms")
    entry = MemoryEntry(
        id=doc._new_id(), text=text, keys=keys, scope=scope, created_at=doc.tick_created()
    )
    doc.memory.append(entry)
    doc.touch()
    return entry


def remove_entry(doc: Document, entry_id: str) -> None:
    before = len(doc.memory)
    doc.memory = [e for e in doc.memory if e.id != entry_id]
    if len(doc.memory) == before:
        raise MemoryStoreError(f"unknown memory entry: {entry_id}")
    doc.touch()


def retrieve(
    doc: Document, context_tail: str, k: int, at: NodeId
) -> list[MemoryEntry]:
    """Top-k in-scope entries by idf-weighted key overlap with the context tail.

    Ties break newer-first, then by id; zero-score entries never appear.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    lineage = set(doc.ancestry(at))
    context_terms = set(normalize_terms(context_tail))
    scored: list[tuple[float, int, str, MemoryEntry]] = []
    for entry in doc.memory:
        if entry.scope is not None and entry.scope not in lineage:
            continue
        score = sum(_idf(t, doc.memory) for t in entry.keys & context_terms)
        if score > 0:
            scored.append((score, entry.created_at, entry.id, entry))
    scored.sort(key=lambda item: (-item[0], -item[1], item[2]))
    return [entry for _, _, _, entry in scored[:k]]


def _fit_suffix(text: str, budget: int, provider: Provider) -> str:
    """Longest suffix of ``text`` whose token count fits the budget."""
    if budget <= 0:
        return ""
    if provider.count_tokens(text) <= budget:
        return text
    lo, hi = 0, len(text)  # smallest start index whose suffix fits
    while lo < hi:
        mid = (lo + hi) // 2
        if provider.count_tokens(text[mid:]) <= budget:
            hi = mid
        else:
            lo = mid + 1
    return text[lo:]


def build_context(
    doc: Document,
    node: NodeId,
    budget_tokens: int,
    memory_k: int,
    provider: Provider,
) -> ContextBundle:
    """Assemble the generation context for a node under a token budget.

    The story text is the ancestry concatenation, kept as an exact suffix.
    When any memory entry is retrieved, the preamble gets a fixed half of
    the effective budget (entries are dropped whole, top-ranked first kept)
    and the story the other half, so injecting more entries never shifts
    the story suffix.
    """
    if budget_tokens < 16:
        raise ValueError(f"budget_tokens must be >= 16, got {budget_tokens}")
    effective = budget_tokens - max(1, budget_tokens // 20)  # 5% reserve

    from .search import read_view  # local import: search depends on graph only

    story_full = read_view(doc, node)
    preamble = ""
    retrieved = (
        retrieve(doc, story_full[-RETRIEVAL_TAIL_CODEPOINTS:], memory_k, node)
        if memory_k > 0 and doc.memory
        else []
    )
    if retrieved:
        mem_budget = effective // MEMORY_BUDGET_SHARE
        lines = [MEMORY_HEADER]
        for entry in retrieved:
            candidate = "\n".join(lines + [f"- {entry.text}"]) + "\n\n"
            if provider.count_tokens(candidate) > mem_budget:
                continue  # drop the whole entry, keep trying lower-ranked ones
            lines.append(f"- {entry.text}")
        if len(lines) > 1:
            preamble = "\n".join(lines) + "\n\n"

    story_budget = effective - (effective // MEMORY_BUDGET_SHARE) if preamble else effective
    story = _fit_suffix(story_full, story_budget, provider)
    minimal = False
    if not story and story_full:
        # budget too small even for a one-token tail of the node's own text
        story = _fit_suffix(doc.node(node).text, effective, provider)
        minimal = True
    estimate = provider.count_tokens(preamble) + provider.count_tokens(story)
    return ContextBundle(
        preamble=preamble, story=story, token_estimate=estimate, minimal=minimal
    )
