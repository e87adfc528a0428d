"""Branching-multiverse writing engine.

A document is a graph of text fragments grown by a language-model
provider, navigated through chapters, bookmarks, tags, and scoped search,
and steered by a human through topology edits, memory injection, and
prompt tools. See README.md for a tour.
"""

from __future__ import annotations

from .annotations import (
    AnnotationSet,
    Chapter,
    FloatingNote,
    add_note,
    chapter_members,
    chapter_of,
    create_chapter,
    notes_visible_at,
    remove_bookmark,
    remove_note,
    resolve_bookmark,
    resolve_tag,
    set_bookmark,
    set_flag,
    tag_node,
    untag_node,
)
from .branching import (
    BranchPolicy,
    ExpansionReport,
    adaptive_expand,
    branch_width,
    fixed_interval_expand,
    generate_siblings,
)
from .errors import (
    AnnotationError,
    GenerationError,
    InvariantViolation,
    LoomError,
    NodeNotFound,
    PersistenceError,
    ProviderError,
    TemplateError,
    TopologyError,
)
from .graph import (
    FLAG_CANONICAL,
    FLAG_COLLAPSED,
    FLAG_EXPLORATORY,
    Document,
    GenMeta,
    Node,
    NodeId,
)
from .memory import (
    ContextBundle,
    MemoryEntry,
    build_context,
    retrieve,
    save_entry,
)
from .persistence import Autosaver, canonical_dumps, load, save
from .providers import (
    Completion,
    GenerationParams,
    NgramProvider,
    Provider,
    ProviderConfig,
    RemoteProvider,
    TableProvider,
    TokenDistribution,
    fixture_transport,
    provider_from_config,
    train_ngram,
)
from .search import Match, SearchScope, export_linear, read_view, search
from .tools import (
    BUILTIN_TEMPLATES,
    PromptTemplate,
    ToolResult,
    install_builtin_templates,
    install_template,
    parse_template,
    run_tool,
    summarize_path,
)

__version__ = "0.1.0"


def new_document(
    root_text: str = "",
    *,
    id_seed: int | None = None,
    provider_config: ProviderConfig | None = None,
    templates: bool = True,
) -> Document:
    """A fresh document: root node, built-in template pack, provider config."""
    doc = Document(root_text, id_seed=id_seed)
    if templates:
        install_builtin_templates(doc)
    doc.provider_config = provider_config
    return doc
