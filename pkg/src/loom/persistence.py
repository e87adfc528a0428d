"""Versioned on-disk document format, autosave, and import/export.

One human-inspectable JSON file per document (gzip when the path ends in
.gz). Serialization is canonical: keys sorted, two-space indent, trailing
newline, logprobs at six decimals, so save . load . save is a byte fixed
point and files diff cleanly. Unknown future fields at the envelope and
document levels survive a round-trip. Secrets never touch disk: provider
config stores the *name* of the auth environment variable, not its value.
"""

from __future__ import annotations

import gzip
import json
import logging
import time
from pathlib import Path
from typing import Any, Callable

from .annotations import Chapter, FloatingNote
from .errors import PersistenceError
from .graph import Document, GenMeta, Node
from .memory import MemoryEntry
from .providers import GenerationParams, ProviderConfig
from .tools import PromptTemplate

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
FILE_SUFFIX = ".loom.json"

_DOCUMENT_KEYS = frozenset(
    {
        "root",
        "nodes",
        "chapters",
        "bookmarks",
        "tags",
        "notes",
        "memory",
        "templates",
        "provider",
    }
)
_ENVELOPE_KEYS = frozenset({"format_version", "saved_at", "document"})

# from-version -> migration of the raw envelope dict, applied one step at
# a time until the payload reaches FORMAT_VERSION
MIGRATIONS: dict[int, Callable[[dict[str, Any]], dict[str, Any]]] = {}


def _node_payload(node: Node) -> dict[str, Any]:
    meta = None
    if node.gen_meta is not None:
        meta = {
            "provider": node.gen_meta.provider,
            "params": node.gen_meta.params,
            "tokens": node.gen_meta.tokens,
            "logprobs": [round(lp, 6) for lp in node.gen_meta.logprobs],
        }
    return {
        "text": node.text,
        "parents": list(node.parents),
        "active_parent": node.active_parent,
        "children_order": list(node.children_order),
        "flags": sorted(node.flags),
        "gen_meta": meta,
    }


def document_to_payload(doc: Document) -> dict[str, Any]:
    ann = doc.annotations
    payload: dict[str, Any] = {
        "root": doc.root,
        "nodes": {nid: _node_payload(n) for nid, n in doc.nodes.items()},
        "chapters": [
            {"id": c.id, "title": c.title, "root_node": c.root_node}
            for c in ann.chapters.values()
        ],
        "bookmarks": dict(ann.bookmarks),
        "tags": {name: sorted(members) for name, members in ann.tags.items()},
        "notes": [
            {
                "id": n.id,
                "title": n.title,
                "body": n.body,
                "scope": n.scope,
                "created_at": n.created_at,
            }
            for n in ann.notes.values()
        ],
        "memory": [
            {
                "id": e.id,
                "text": e.text,
                "keys": sorted(e.keys),
                "scope": e.scope,
                "created_at": e.created_at,
            }
            for e in doc.memory
        ],
        "templates": [
            {
                "name": t.name,
                "body": t.body,
                "output": t.output,
                "params": t.params.to_dict(),
            }
            for t in doc.templates.values()
        ],
        "provider": doc.provider_config.to_dict() if doc.provider_config else None,
    }
    payload.update(doc.extra)
    return payload


def payload_to_document(payload: dict[str, Any]) -> Document:
    doc = Document()
    try:
        doc.root = payload["root"]
        doc.nodes = {}
        for nid, raw in payload["nodes"].items():
            meta = raw.get("gen_meta")
            doc.nodes[nid] = Node(
                id=nid,
                text=raw["text"],
                parents=list(raw["parents"]),
                active_parent=raw["active_parent"],
                children_order=list(raw["children_order"]),
                flags=set(raw.get("flags", ())),
                gen_meta=GenMeta(
                    provider=meta["provider"],
                    params=dict(meta.get("params", {})),
                    tokens=list(meta.get("tokens", ())),
                    logprobs=[float(x) for x in meta.get("logprobs", ())],
                )
                if meta
                else None,
            )
        for raw in payload.get("chapters", ()):
            chapter = Chapter(id=raw["id"], title=raw["title"], root_node=raw["root_node"])
            doc.annotations.chapters[chapter.id] = chapter
        doc.annotations.bookmarks = dict(payload.get("bookmarks", {}))
        doc.annotations.tags = {
            name: set(members) for name, members in payload.get("tags", {}).items()
        }
        for raw in payload.get("notes", ()):
            note = FloatingNote(
                id=raw["id"],
                title=raw["title"],
                body=raw["body"],
                scope=raw.get("scope"),
                created_at=raw.get("created_at", 0),
            )
            doc.annotations.notes[note.id] = note
        doc.memory = [
            MemoryEntry(
                id=raw["id"],
                text=raw["text"],
                keys=set(raw["keys"]),
                scope=raw.get("scope"),
                created_at=raw.get("created_at", 0),
            )
            for raw in payload.get("memory", ())
        ]
        doc.templates = {}
        for raw in payload.get("templates", ()):
            template = PromptTemplate(
                name=raw["name"],
                body=raw["body"],
                params=GenerationParams.from_dict(raw.get("params", {})),
                output=raw.get("output", "return-only"),
            )
            doc.templates[template.name] = template
        provider = payload.get("provider")
        doc.provider_config = ProviderConfig.from_dict(provider) if provider else None
    except (KeyError, TypeError) as exc:
        raise PersistenceError(f"malformed document payload: {exc!r}") from exc

    doc.extra = {k: v for k, v in payload.items() if k not in _DOCUMENT_KEYS}
    issued = set(doc.nodes) | set(doc.annotations.chapters) | set(doc.annotations.notes)
    issued |= {e.id for e in doc.memory}
    doc._issued |= issued
    stamps = [n.created_at for n in doc.annotations.notes.values()]
    stamps += [e.created_at for e in doc.memory]
    doc.note_created_floor(max(stamps, default=0))
    return doc


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def canonical_dumps(doc: Document, saved_at: str | None = None) -> str:
    """The canonical serialized form of a document.

    ``saved_at`` is reused from the last load unless the document changed
    since, so an unmodified load/save cycle is byte-stable.
    """
    if saved_at is None:
        if doc.saved_at is not None and not doc.dirty:
            saved_at = doc.saved_at
        else:
            saved_at = _timestamp()
    envelope: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "saved_at": saved_at,
        "document": document_to_payload(doc),
    }
    envelope.update(doc.envelope_extra)
    return json.dumps(envelope, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def save(doc: Document, path: str | Path, saved_at: str | None = None) -> None:
    """Write the canonical form to ``path`` (gzipped when it ends in .gz)."""
    text = canonical_dumps(doc, saved_at)
    saved_at_used = json.loads(text)["saved_at"]
    path = Path(path)
    if path.suffix == ".gz":
        path.write_bytes(gzip.compress(text.encode("utf-8")))
    else:
        path.write_text(text, encoding="utf-8")
    doc.mark_saved(saved_at_used)


def loads(text: str) -> Document:
    try:
        envelope = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PersistenceError(f"not valid JSON: {exc}") from exc
    if not isinstance(envelope, dict) or "document" not in envelope:
        raise PersistenceError("missing document payload")
    version = envelope.get("format_version")
    if not isinstance(version, int):
        raise PersistenceError(f"missing or bad format_version: {version!r}")
    if version > FORMAT_VERSION:
        raise PersistenceError(
            f"file format version {version} is newer than supported {FORMAT_VERSION}"
        )
    while version < FORMAT_VERSION:
        migrate = MIGRATIONS.get(version)
        if migrate is None:
            raise PersistenceError(f"no migration from format version {version}")
        envelope = migrate(envelope)
        version += 1
    doc = payload_to_document(envelope["document"])
    doc.envelope_extra = {k: v for k, v in envelope.items() if k not in _ENVELOPE_KEYS}
    problems = doc.problems()
    if problems:
        raise PersistenceError("document fails invariants: " + "; ".join(problems))
    doc.mark_saved(envelope.get("saved_at") or _timestamp())
    return doc


def load(path: str | Path) -> Document:
    """Read and validate a document file; errors name the offending nodes."""
    path = Path(path)
    try:
        if path.suffix == ".gz":
            text = gzip.decompress(path.read_bytes()).decode("utf-8")
        else:
            text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    return loads(text)


class Autosaver:
    """Ring buffer of timestamped snapshots, written only after mutations."""

    def __init__(self, directory: str | Path, keep: int = 20, prefix: str = "snapshot"):
        if keep < 1:
            raise ValueError("keep must be >= 1")
        self.directory = Path(directory)
        self.keep = keep
        self.prefix = prefix
        self._last_seq = 0

    def tick(self, doc: Document) -> Path | None:
        """Snapshot the document if it mutated since the last snapshot."""
        seq = doc.mutation_seq
        if seq == self._last_seq:
            return None
        name = f"{self.prefix}-{seq:08d}-{time.strftime('%Y%m%dT%H%M%S', time.gmtime())}"
        path = self.directory / f"{name}{FILE_SUFFIX}"
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            path.write_text(canonical_dumps(doc), encoding="utf-8")
        except OSError as exc:
            logger.warning("autosave failed for %s: %s", path, exc)
            return None
        self._last_seq = seq
        self._prune()
        return path

    def _prune(self) -> None:
        snapshots = sorted(self.directory.glob(f"{self.prefix}-*{FILE_SUFFIX}"))
        for stale in snapshots[: -self.keep]:
            try:
                stale.unlink()
            except OSError:
                pass
