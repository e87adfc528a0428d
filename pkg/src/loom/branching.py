"""Multiverse growth: sibling generation, fixed-interval and adaptive expansion.

Adaptive expansion queries the provider's next-token distribution at every
step. Where the smallest prefix covering the cumulative threshold tau has
length one (the top token alone is confident enough), the token is appended
to the current segment and no node is created; where it has length k > 1,
the segment closes and k children open, one per prefix token, each starting
with its divergent token. The result alternates deterministic stretches
with divergent junctures.

Node creation is breadth-first across branches so that truncation under the
total node budget is reproducible.
"""

from __future__ import annotations

import math
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from .errors import GenerationError, ProviderError
from .graph import GenMeta
from .memory import build_context
from .providers import (
    MIN_LOGPROB,
    GenerationParams,
    Provider,
    TokenDistribution,
    sample_from,
)

if TYPE_CHECKING:
    from .graph import Document, NodeId

DEFAULT_CONTEXT_BUDGET = 2048
DEFAULT_MEMORY_K = 3
_FULL_SUPPORT_TOP_K = 1024

STOP_SEGMENT_BUDGET = "segment_budget"
STOP_NODE_BUDGET = "node_budget"
STOP_DEAD_END = "dead_end"
STOP_SEQUENCE = "stop_sequence"
STOP_CANCELLED = "cancelled"


@dataclass
class BranchPolicy:
    """Controls of adaptive expansion.

    ``branch_cap`` of None means unlimited. ``stochastic`` switches the
    divergent-token choice from the deterministic top-k prefix to sampling
    distinct tokens without replacement until their mass reaches tau.
    """

    tau: float
    branch_cap: int | None = None
    segment_token_budget: int = 16
    total_node_budget: int = 64
    params: GenerationParams = field(default_factory=GenerationParams)
    stochastic: bool = False

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.branch_cap is not None and self.branch_cap < 1:
            raise ValueError(f"branch_cap must be >= 1, got {self.branch_cap}")
        if self.segment_token_budget < 1:
            raise ValueError("segment_token_budget must be >= 1")
        if self.total_node_budget < 1:
            raise ValueError("total_node_budget must be >= 1")


@dataclass
class ExpansionReport:
    """What an expansion did: nodes created, branch widths, and why each
    branch stopped."""

    created: list[NodeId] = field(default_factory=list)
    branch_factors: dict[NodeId, int] = field(default_factory=dict)
    stop_reasons: dict[NodeId, str] = field(default_factory=dict)
    cancelled: bool = False


def branch_width(dist: TokenDistribution, tau: float, cap: int | None) -> int:
    """min(cap, smallest prefix length whose probability sum reaches tau)."""
    width = dist.nucleus_size(tau)
    if cap is not None:
        width = min(width, cap)
    return width


def _meta(provider: Provider, params: GenerationParams, token: str, prob: float) -> GenMeta:
    return GenMeta(
        provider=provider.name,
        params=params.to_dict(),
        tokens=[token],
        logprobs=[_round_logprob(prob)],
    )


def _round_logprob(prob: float) -> float:
    if prob <= 0:
        return MIN_LOGPROB
    return max(round(math.log(prob), 6), MIN_LOGPROB)


def _extend(doc: Document, node_id: NodeId, ctx: str, token: str, prob: float,
            provider: Provider) -> str:
    """Append one token to a growing node; returns the extended context."""
    extended = provider.append_token(ctx, token)
    node = doc.nodes[node_id]
    node.text += extended[len(ctx):]
    if node.gen_meta is not None:
        node.gen_meta.tokens.append(token)
        node.gen_meta.logprobs.append(_round_logprob(prob))
    doc.touch()
    return extended


def _check_stop(doc: Document, node_id: NodeId, stops: tuple[str, ...]) -> bool:
    """Truncate a growing node at the earliest stop sequence, if one appears.

    Returns True when the branch must stop. A node truncated to nothing is
    removed entirely (only the root may be empty).
    """
    if not stops:
        return False
    node = doc.nodes[node_id]
    best: int | None = None
    for stop in stops:
        if not stop:
            continue
        idx = node.text.find(stop)
        if idx != -1 and (best is None or idx < best):
            best = idx
    if best is None:
        return False
    node.text = node.text[:best]
    if not node.text:
        doc.delete_subtree(node_id)
    doc.touch()
    return True


@dataclass
class _GrowJob:
    base: NodeId  # node the segment hangs under
    node: NodeId | None  # the growing node, once it exists
    tokens: int  # tokens in the current segment


def adaptive_expand(
    doc: Document,
    node: NodeId,
    policy: BranchPolicy,
    provider: Provider,
    *,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    memory_k: int = DEFAULT_MEMORY_K,
    on_created: Callable[[NodeId], None] | None = None,
    cancel: threading.Event | None = None,
) -> ExpansionReport:
    """Grow an adaptive subtree under ``node`` per the branch policy."""
    doc.node(node)
    report = ExpansionReport()
    budget = policy.total_node_budget
    params = policy.params
    rng = random.Random(params.rng_seed)
    top_k = policy.branch_cap if policy.branch_cap is not None else _FULL_SUPPORT_TOP_K
    queue: deque[_GrowJob] = deque([_GrowJob(base=node, node=None, tokens=0)])

    def create(parent: NodeId, ctx: str, token: str, prob: float) -> NodeId | None:
        nonlocal budget
        if budget <= 0:
            return None
        delta = provider.append_token(ctx, token)[len(ctx):]
        child = doc.create_child(parent, delta)
        doc.nodes[child].gen_meta = _meta(provider, params, token, prob)
        budget -= 1
        report.created.append(child)
        if on_created is not None:
            on_created(child)
        return child

    while queue:
        job = queue.popleft()
        while True:
            if cancel is not None and cancel.is_set():
                report.cancelled = True
                report.stop_reasons[job.node or job.base] = STOP_CANCELLED
                queue.clear()
                break
            if job.tokens >= policy.segment_token_budget:
                report.stop_reasons[job.node or job.base] = STOP_SEGMENT_BUDGET
                break
            focus = job.node if job.node is not None else job.base
            ctx = build_context(doc, focus, context_budget, memory_k, provider).text
            try:
                dist = provider.next_distribution(ctx, top_k=top_k)
            except ProviderError:
                report.stop_reasons[focus] = STOP_DEAD_END
                raise GenerationError(
                    "provider failed mid-expansion", created=list(report.created)
                ) from None
            if not dist:
                report.stop_reasons[focus] = STOP_DEAD_END
                break
            if policy.stochastic:
                chosen = _sample_distinct(dist, policy, rng)
            else:
                chosen = dist.top(branch_width(dist, policy.tau, policy.branch_cap))

            if len(chosen) == 1:
                token, prob = chosen[0]
                if job.node is None:
                    child = create(job.base, ctx, token, prob)
                    if child is None:
                        report.stop_reasons[job.base] = STOP_NODE_BUDGET
                        break
                    job.node = child
                else:
                    _extend(doc, job.node, ctx, token, prob, provider)
                job.tokens += 1
                if _check_stop(doc, job.node, params.stop):
                    if job.node not in doc.nodes:
                        report.created.remove(job.node)
                        budget += 1
                    else:
                        report.stop_reasons[job.node] = STOP_SEQUENCE
                    break
            else:
                anchor = job.node if job.node is not None else job.base
                spawned = 0
                for token, prob in chosen:
                    child = create(anchor, ctx, token, prob)
                    if child is None:
                        report.stop_reasons[anchor] = STOP_NODE_BUDGET
                        break
                    queue.append(_GrowJob(base=anchor, node=child, tokens=1))
                    spawned += 1
                report.branch_factors[anchor] = spawned
                break
    return report


def _sample_distinct(
    dist: TokenDistribution, policy: BranchPolicy, rng: random.Random
) -> list[tuple[str, float]]:
    """Sample distinct tokens without replacement until their mass covers tau."""
    remaining = list(dist.entries)
    chosen: list[tuple[str, float]] = []
    mass = 0.0
    cap = policy.branch_cap if policy.branch_cap is not None else len(remaining)
    while remaining and len(chosen) < cap and mass < policy.tau - 1e-9:
        total = sum(p for _, p in remaining)
        pick = rng.random() * total
        acc = 0.0
        for i, (tok, p) in enumerate(remaining):
            acc += p
            if pick <= acc:
                chosen.append((tok, p))
                mass += p
                remaining.pop(i)
                break
        else:
            chosen.append(remaining.pop())
    return chosen


def generate_siblings(
    doc: Document,
    node: NodeId,
    n: int,
    params: GenerationParams,
    provider: Provider,
    *,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    memory_k: int = DEFAULT_MEMORY_K,
    on_created: Callable[[NodeId], None] | None = None,
    cancel: threading.Event | None = None,
) -> list[NodeId]:
    """n fresh completions of the node's context, each a new child.

    When a seed is set, sibling i completes with seed + i so runs are
    reproducible yet siblings diverge. On provider failure, children
    already created are kept and reported on the raised error.
    """
    doc.node(node)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    ctx = build_context(doc, node, context_budget, memory_k, provider).text
    created: list[NodeId] = []
    for i in range(n):
        if cancel is not None and cancel.is_set():
            break
        seeded = params if params.rng_seed is None else _with_seed(params, params.rng_seed + i)
        try:
            completion = provider.complete(ctx, seeded)
        except ProviderError as exc:
            raise GenerationError(
                f"provider failed after {len(created)} of {n} siblings: {exc}",
                created=created,
            ) from exc
        if not completion.text:
            continue
        child = doc.create_child(node, completion.text)
        doc.nodes[child].gen_meta = GenMeta(
            provider=provider.name,
            params=seeded.to_dict(),
            tokens=list(completion.tokens),
            logprobs=[round(lp, 6) for lp in completion.logprobs],
        )
        created.append(child)
        if on_created is not None:
            on_created(child)
    return created


def _with_seed(params: GenerationParams, seed: int) -> GenerationParams:
    return GenerationParams(
        temperature=params.temperature,
        top_p=params.top_p,
        max_tokens=params.max_tokens,
        stop=params.stop,
        rng_seed=seed,
    )


def fixed_interval_expand(
    doc: Document,
    node: NodeId,
    n_tokens: int,
    branch_factor: int,
    depth: int,
    params: GenerationParams,
    provider: Provider,
    *,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    memory_k: int = DEFAULT_MEMORY_K,
    on_created: Callable[[NodeId], None] | None = None,
    cancel: threading.Event | None = None,
) -> ExpansionReport:
    """Branch every fixed n tokens: the baseline a threshold policy improves on.

    Builds a complete ``branch_factor``-ary tree of the given depth. Each
    edge is a segment of exactly ``n_tokens`` tokens (shorter on a stop
    sequence or dead end). Sibling segments start with distinct first
    tokens, the top of the distribution; narrower support yields fewer
    siblings and a dead-end note.
    """
    for label, value in (("n_tokens", n_tokens), ("branch_factor", branch_factor),
                         ("depth", depth)):
        if value < 1:
            raise ValueError(f"{label} must be >= 1, got {value}")
    doc.node(node)
    report = ExpansionReport()
    rng = random.Random(params.rng_seed)
    frontier = [node]
    for _ in range(depth):
        next_frontier: list[NodeId] = []
        for parent in frontier:
            if cancel is not None and cancel.is_set():
                report.cancelled = True
                report.stop_reasons[parent] = STOP_CANCELLED
                return report
            ctx = build_context(doc, parent, context_budget, memory_k, provider).text
            dist = provider.next_distribution(ctx, top_k=branch_factor)
            firsts = dist.top(branch_factor)
            if len(firsts) < branch_factor:
                report.stop_reasons[parent] = STOP_DEAD_END
            if not firsts:
                continue
            report.branch_factors[parent] = len(firsts)
            for token, prob in firsts:
                current = provider.append_token(ctx, token)
                child = doc.create_child(parent, current[len(ctx):])
                doc.nodes[child].gen_meta = _meta(provider, params, token, prob)
                report.created.append(child)
                if on_created is not None:
                    on_created(child)
                stopped = False
                for _ in range(n_tokens - 1):
                    more = provider.next_distribution(current, top_k=_FULL_SUPPORT_TOP_K)
                    if not more:
                        report.stop_reasons[child] = STOP_DEAD_END
                        stopped = True
                        break
                    tok, p = sample_from(more, params, rng)
                    current = _extend(doc, child, current, tok, p, provider)
                    if _check_stop(doc, child, params.stop):
                        if child not in doc.nodes:
                            report.created.remove(child)
                        else:
                            report.stop_reasons[child] = STOP_SEQUENCE
                        stopped = True
                        break
                if child in doc.nodes and not stopped:
                    next_frontier.append(child)
        frontier = next_frontier
    return report
