"""Prompt-template helpers run through the provider.

Templates substitute {context}, {summary}, {selection}, and {var:NAME}
placeholders, complete the rendered prompt, and apply an output effect:
insert the text as a child node, file it as a floating note, or just
return it. A small built-in pack is copied into every new document so
works stay self-contained.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

from .annotations import add_note
from .errors import ProviderError, TemplateError
from .graph import GenMeta
from .memory import build_context
from .providers import GenerationParams, Provider
from .search import read_view

if TYPE_CHECKING:
    from .graph import Document, NodeId

OUTPUT_CHILD = "insert-as-child"
OUTPUT_NOTE = "floating-note"
OUTPUT_RETURN = "return-only"
OUTPUT_MODES = (OUTPUT_CHILD, OUTPUT_NOTE, OUTPUT_RETURN)

PLACEHOLDER_RE = re.compile(r"\{(context|summary|selection|var:[A-Za-z0-9_]+)\}")
FRONT_MATTER_DELIMITER = "---"

DEFAULT_SUMMARY_TOKENS = 64


@dataclass
class PromptTemplate:
    name: str
    body: str
    params: GenerationParams = field(default_factory=GenerationParams)
    output: str = OUTPUT_RETURN

    def __post_init__(self):
        if self.output not in OUTPUT_MODES:
            raise TemplateError(f"unknown output mode: {self.output!r}")
        if not self.name:
            raise TemplateError("template name cannot be empty")

    def placeholders(self) -> list[str]:
        return [m.group(1) for m in PLACEHOLDER_RE.finditer(self.body)]


@dataclass
class ToolResult:
    text: str
    effect: str
    target: str | None = None  # created node id or note id, if any


def parse_template(text: str) -> PromptTemplate:
    """Parse the pack format: ``key: value`` front matter, ---, body."""
    lines = text.splitlines()
    try:
        cut = lines.index(FRONT_MATTER_DELIMITER)
    except ValueError:
        raise TemplateError(f"missing {FRONT_MATTER_DELIMITER!r} delimiter") from None
    meta: dict[str, str] = {}
    for line in lines[:cut]:
        if not line.strip():
            continue
        if ":" not in line:
            raise TemplateError(f"bad front-matter line: {line!r}")
        key, _, value = line.partition(":")
        meta[key.strip()] = value.strip()
    if "name" not in meta:
        raise TemplateError("front matter must set a name")
    params = GenerationParams(
        temperature=float(meta.get("temperature", 1.0)),
        top_p=float(meta.get("top_p", 1.0)),
        max_tokens=int(meta.get("max_tokens", 32)),
        stop=tuple(s for s in meta.get("stop", "").split("|") if s),
        rng_seed=int(meta["seed"]) if "seed" in meta else None,
    )
    return PromptTemplate(
        name=meta["name"],
        body="\n".join(lines[cut + 1 :]),
        params=params,
        output=meta.get("output", OUTPUT_RETURN),
    )


def format_template(template: PromptTemplate) -> str:
    """Inverse of parse_template."""
    lines = [f"name: {template.name}", f"output: {template.output}"]
    p = template.params
    lines.append(f"temperature: {p.temperature}")
    lines.append(f"top_p: {p.top_p}")
    lines.append(f"max_tokens: {p.max_tokens}")
    if p.stop:
        lines.append(f"stop: {'|'.join(p.stop)}")
    if p.rng_seed is not None:
        lines.append(f"seed: {p.rng_seed}")
    lines.append(FRONT_MATTER_DELIMITER)
    return "\n".join(lines) + "\n" + template.body


def install_template(doc: Document, template: PromptTemplate) -> None:
    doc.templates[template.name] = template
    doc.touch()


def render_template(
    doc: Document,
    template: PromptTemplate,
    node: NodeId,
    vars: Mapping[str, str],
    provider: Provider,
    *,
    context_budget: int = 1024,
    memory_k: int = 3,
) -> str:
    """Substitute every placeholder exactly once, in a single pass.

    Substituted values are never rescanned, so placeholder-shaped user
    text cannot trigger a second substitution.
    """
    needed = set(template.placeholders())

    def value_of(name: str) -> str:
        if name == "context":
            return build_context(doc, node, context_budget, memory_k, provider).text
        if name == "summary":
            return summarize_path(doc, node, DEFAULT_SUMMARY_TOKENS, provider)
        if name == "selection":
            if "selection" not in vars:
                raise TemplateError("template uses {selection} but none was supplied")
            return vars["selection"]
        var = name[len("var:"):]
        if var not in vars:
            raise TemplateError(f"unbound template variable: {var}")
        return vars[var]

    values = {name: value_of(name) for name in needed}
    return PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], template.body)


def run_tool(
    doc: Document,
    name: str,
    node: NodeId,
    vars: Mapping[str, str] | None = None,
    provider: Provider | None = None,
    *,
    context_budget: int = 1024,
    memory_k: int = 3,
) -> ToolResult:
    """Render a stored template at a node, complete it, apply its effect."""
    if provider is None:
        raise TemplateError("run_tool requires a provider")
    if name not in doc.templates:
        raise TemplateError(f"unknown template: {name!r}")
    doc.node(node)
    template = doc.templates[name]
    prompt = render_template(
        doc, template, node, vars or {}, provider,
        context_budget=context_budget, memory_k=memory_k,
    )
    completion = provider.complete(prompt, template.params)
    target: str | None = None
    if template.output == OUTPUT_CHILD and completion.text:
        target = doc.create_child(node, completion.text)
        doc.nodes[target].gen_meta = GenMeta(
            provider=provider.name,
            params=template.params.to_dict(),
            tokens=list(completion.tokens),
            logprobs=[round(lp, 6) for lp in completion.logprobs],
        )
    elif template.output == OUTPUT_NOTE and completion.text:
        note = add_note(doc, title=template.name, body=completion.text, scope=node)
        target = note.id
    return ToolResult(text=completion.text, effect=template.output, target=target)


# -- summarization -------------------------------------------------------------

_SUMMARY_EXEMPLARS = (
    "Text:\nThe caravan crossed the salt flats for nine days, rationing water, "
    "until the blue towers of Qet rose out of the haze.\n\n"
    "Summary: After a brutal nine-day desert crossing, the caravan reaches Qet.\n\n"
    "Text:\nMira confronted her brother about the forged will. He denied "
    "everything, but his hands shook as he poured the tea.\n\n"
    "Summary: Mira accuses her brother of forgery; he denies it, visibly shaken.\n\n"
)


def _summarize_once(chunk: str, max_tokens: int, provider: Provider) -> str:
    prompt = f"{_SUMMARY_EXEMPLARS}Text:\n{chunk}\n\nSummary:"
    params = GenerationParams(temperature=0, max_tokens=max_tokens)
    return provider.complete(prompt, params).text


def _chunk(text: str, chunk_tokens: int, provider: Provider) -> list[str]:
    """Split left-to-right into pieces of at most ``chunk_tokens`` tokens."""
    if provider.count_tokens(text) <= chunk_tokens:
        return [text]
    chunks = []
    rest = text
    while rest:
        if provider.count_tokens(rest) <= chunk_tokens:
            chunks.append(rest)
            break
        lo, hi = 1, len(rest)  # largest prefix that fits
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if provider.count_tokens(rest[:mid]) <= chunk_tokens:
                lo = mid
            else:
                hi = mid - 1
        chunks.append(rest[:lo])
        rest = rest[lo:]
    return chunks


PARTIAL_MARKER = " [summary incomplete: provider error]"
MAX_SUMMARY_PASSES = 3


def summarize_path(
    doc: Document, node: NodeId, target_tokens: int, provider: Provider
) -> str:
    """Hierarchical few-shot summary of the node's ancestry text.

    The ancestry is chunked to half the provider's context budget and each
    chunk summarized; multi-chunk results are merged by one further summary
    call, re-chunking at most three times. On provider failure the partial
    result is returned with a marker suffix.
    """
    if target_tokens < 8:
        raise ValueError(f"target_tokens must be >= 8, got {target_tokens}")
    story = read_view(doc, node)
    chunk_tokens = max(target_tokens, provider.context_budget // 2)
    done: list[str] = []
    try:
        pieces = _chunk(story, chunk_tokens, provider)
        summaries = []
        for piece in pieces:
            summaries.append(_summarize_once(piece, target_tokens, provider))
            done = summaries
        passes = 1
        while len(summaries) > 1:
            merged = " ".join(summaries)
            if provider.count_tokens(merged) <= chunk_tokens or passes >= MAX_SUMMARY_PASSES:
                if provider.count_tokens(merged) > chunk_tokens:
                    merged = _chunk(merged, chunk_tokens, provider)[0]
                return _summarize_once(merged, 2 * target_tokens, provider)
            passes += 1
            summaries = [
                _summarize_once(piece, target_tokens, provider)
                for piece in _chunk(merged, chunk_tokens, provider)
            ]
            done = summaries
        return summaries[0]
    except ProviderError:
        return " ".join(done) + PARTIAL_MARKER


# -- built-in pack ---------------------------------------------------------------

BUILTIN_TEMPLATES: tuple[PromptTemplate, ...] = (
    PromptTemplate(
        name="sensory-description",
        body=(
            "{context}\n\n"
            "Describe the {var:OBJECT} using all five senses.\n\n"
            "Description:"
        ),
        params=GenerationParams(temperature=0.8, max_tokens=96),
        output=OUTPUT_RETURN,
    ),
    PromptTemplate(
        name="twist-ending",
        body=(
            "Story so far:\n{summary}\n\n"
            "Write a surprising but fitting twist ending.\n\n"
            "Twist:"
        ),
        params=GenerationParams(temperature=0.9, max_tokens=128),
        output=OUTPUT_NOTE,
    ),
    PromptTemplate(
        name="character-voice",
        body=(
            "{context}\n\n"
            "Rewrite this line in the voice of {var:CHARACTER}: {selection}\n\n"
            "Rewritten:"
        ),
        params=GenerationParams(temperature=0.7, max_tokens=64),
        output=OUTPUT_RETURN,
    ),
    PromptTemplate(
        name="chapter-summary",
        body="Summarize the chapter below in a short paragraph.\n\n{context}\n\nSummary:",
        params=GenerationParams(temperature=0, max_tokens=96),
        output=OUTPUT_RETURN,
    ),
)


def install_builtin_templates(doc: Document) -> None:
    for template in BUILTIN_TEMPLATES:
        doc.templates.setdefault(template.name, template)
