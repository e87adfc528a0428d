"""Uniform interface to next-token distributions and sampled completions.

Two local deterministic providers (a suffix-rule table and an n-gram model
trained on a corpus) cover tests and demos; a remote provider speaks an
OpenAI-style completion protocol over HTTPS. Local providers implement
``complete`` as an explicit sampling loop over ``next_distribution``, so
temperature-0 completion is exactly repeated argmax.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import httpx

from .errors import ProviderError

# slack for cumulative-probability comparisons, so that distributions whose
# mass sums to 1.0 only up to float error still behave as exhaustive
CUMULATIVE_EPS = 1e-9

# floor for recorded logprobs; keeps serialized metadata strict-JSON safe
MIN_LOGPROB = -999.999999

STOP_MAX_TOKENS = "max_tokens"
STOP_SEQUENCE = "stop_sequence"
STOP_DEAD_END = "dead_end"


@dataclass(frozen=True)
class GenerationParams:
    """Sampling controls for one completion."""

    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 32
    stop: tuple[str, ...] = ()
    rng_seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "stop": list(self.stop),
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> GenerationParams:
        return cls(
            temperature=data.get("temperature", 1.0),
            top_p=data.get("top_p", 1.0),
            max_tokens=data.get("max_tokens", 32),
            stop=tuple(data.get("stop", ())),
            rng_seed=data.get("rng_seed"),
        )


class TokenDistribution:
    """Ranked (token, prob) pairs: descending probability, ties lexicographic."""

    __slots__ = ("entries",)

    def __init__(self, entries: Iterable[tuple[str, float]], *, presorted: bool = False):
        items = list(entries)
        if not presorted:
            items.sort(key=lambda e: (-e[1], e[0]))
        self.entries = items
        self._check()

    def _check(self) -> None:
        seen = set()
        total = 0.0
        prev = math.inf
        for token, prob in self.entries:
            if token in seen:
                raise ValueError(f"duplicate token in distribution: {token!r}")
            seen.add(token)
            if prob < 0:
                raise ValueError(f"negative probability for {token!r}")
            if prob > prev:
                raise ValueError("distribution not in descending probability order")
            prev = prob
            total += prob
        if total > 1 + CUMULATIVE_EPS:
            raise ValueError(f"probabilities sum to {total}, above 1")

    @classmethod
    def from_probs(cls, probs: Mapping[str, float]) -> TokenDistribution:
        return cls(probs.items())

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def top(self, k: int) -> list[tuple[str, float]]:
        return self.entries[:k]

    def nucleus_size(self, threshold: float) -> int:
        """Length of the smallest prefix whose mass reaches ``threshold``.

        Falls back to the full support if the mass never gets there.
        """
        cumulative = 0.0
        for i, (_, prob) in enumerate(self.entries):
            cumulative += prob
            if cumulative >= threshold - CUMULATIVE_EPS:
                return i + 1
        return len(self.entries)


@dataclass
class Completion:
    """Result of one sampled continuation."""

    text: str
    tokens: list[str] = field(default_factory=list)
    logprobs: list[float] = field(default_factory=list)
    stop_reason: str = STOP_MAX_TOKENS


def sample_from(
    dist: TokenDistribution, params: GenerationParams, rng: random.Random
) -> tuple[str, float]:
    """Draw one token honoring temperature and top_p; returns (token, raw prob).

    Temperature 0 is argmax. Otherwise probabilities are scaled p**(1/T),
    restricted to the smallest prefix reaching top_p, renormalized, and
    sampled. The returned probability is the provider's raw value.
    """
    if not dist:
        raise ProviderError("cannot sample from an empty distribution")
    if params.temperature == 0:
        return dist.entries[0]
    weights = [p ** (1.0 / params.temperature) for _, p in dist.entries]
    if params.top_p < 1:
        keep = dist.nucleus_size(params.top_p)
    else:
        keep = len(dist)
    weights = weights[:keep]
    total = sum(weights)
    if total <= 0:
        return dist.entries[0]
    pick = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if pick <= acc:
            return dist.entries[i]
    return dist.entries[keep - 1]


class Provider:
    """Base class: a source of next-token distributions."""

    name = "provider"
    context_budget = 2048

    def next_distribution(self, context: str, top_k: int) -> TokenDistribution:
        raise NotImplementedError

    def count_tokens(self, text: str) -> int:
        """Token estimate used for context budgeting."""
        return len(text)

    def append_token(self, context: str, token: str) -> str:
        """Extend a context string by one token (providers own separators)."""
        return context + token

    def complete(self, context: str, params: GenerationParams) -> Completion:
        """Autoregressive loop: next_distribution then sample, token by token."""
        rng = random.Random(params.rng_seed)
        current = context
        produced = ""
        tokens: list[str] = []
        logprobs: list[float] = []
        reason = STOP_MAX_TOKENS
        for _ in range(params.max_tokens):
            dist = self.next_distribution(current, top_k=_SAMPLING_TOP_K)
            if not dist:
                reason = STOP_DEAD_END
                break
            token, prob = sample_from(dist, params, rng)
            extended = self.append_token(current, token)
            produced += extended[len(current):]
            current = extended
            tokens.append(token)
            logprobs.append(max(math.log(prob), MIN_LOGPROB) if prob > 0 else MIN_LOGPROB)
            hit = _find_stop(produced, params.stop)
            if hit is not None:
                produced = produced[:hit]
                reason = STOP_SEQUENCE
                break
        return Completion(text=produced, tokens=tokens, logprobs=logprobs, stop_reason=reason)


_SAMPLING_TOP_K = 1024


def _find_stop(text: str, stops: tuple[str, ...]) -> int | None:
    """Earliest index at which any stop sequence begins, if one occurs."""
    best: int | None = None
    for stop in stops:
        if not stop:
            continue
        idx = text.find(stop)
        if idx != -1 and (best is None or idx < best):
            best = idx
    return best


# -- table provider ------------------------------------------------------------

# Canonical test model M1. Token inventory is single characters; the rule
# whose suffix is the longest match against the end of the context wins,
# with a uniform a/b default elsewhere. The three rules put an adaptive
# expansion through the one-, two-, and three-branch regimes with
# hand-checkable arithmetic.
M1_RULES: dict[str, dict[str, float]] = {
    "a": {"b": 0.5, "c": 0.3, "d": 0.2},
    "ab": {"c": 0.995, "d": 0.005},
    "b": {"a": 0.6, "c": 0.4},
}
M1_DEFAULT: dict[str, float] = {"a": 0.5, "b": 0.5}


class TableProvider(Provider):
    """Deterministic provider backed by suffix -> distribution rules."""

    def __init__(
        self,
        rules: Mapping[str, Mapping[str, float]],
        default: Mapping[str, float] | None = None,
        name: str = "table",
    ):
        self.rules = {suffix: dict(dist) for suffix, dist in rules.items()}
        self.default = dict(default) if default is not None else None
        self.name = name

    @classmethod
    def m1(cls) -> TableProvider:
        return cls(M1_RULES, M1_DEFAULT, name="table:m1")

    def next_distribution(self, context: str, top_k: int) -> TokenDistribution:
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        match: dict[str, float] | None = None
        match_len = -1
        for suffix, dist in self.rules.items():
            if len(suffix) > match_len and context.endswith(suffix):
                match = dist
                match_len = len(suffix)
        if match is None:
            match = self.default
        if match is None:
            return TokenDistribution([])
        full = TokenDistribution.from_probs(match)
        return TokenDistribution(full.top(top_k), presorted=True)


# -- n-gram provider -----------------------------------------------------------


def tokenize(text: str, mode: str) -> list[str]:
    if mode == "codepoint":
        return list(text)
    if mode == "whitespace":
        return text.split()
    raise ValueError(f"unknown tokenizer mode: {mode!r}")


class NgramProvider(Provider):
    """Maximum-likelihood n-gram model over a training corpus.

    ``order`` is the context length in tokens. An unseen context backs off
    one token at a time down to the unigram distribution, which always has
    mass, so local n-gram generation never dead-ends.
    """

    def __init__(self, order: int, tokenizer: str = "codepoint", name: str = "ngram"):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        self.order = order
        self.tokenizer = tokenizer
        self.name = name
        # one table per context length: tuple(context tokens) -> Counter
        self._tables: list[dict[tuple[str, ...], Counter[str]]] = [
            {} for _ in range(order + 1)
        ]

    @classmethod
    def train(
        cls, corpus: str, order: int, tokenizer: str = "codepoint", name: str = "ngram"
    ) -> NgramProvider:
        model = cls(order, tokenizer, name)
        tokens = tokenize(corpus, tokenizer)
        if not tokens:
            raise ValueError("corpus is empty")
        for length in range(order + 1):
            table = model._tables[length]
            for i in range(length, len(tokens)):
                context = tuple(tokens[i - length : i])
                table.setdefault(context, Counter())[tokens[i]] += 1
        return model

    def next_distribution(self, context: str, top_k: int) -> TokenDistribution:
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        tokens = tokenize(context, self.tokenizer)
        for length in range(min(self.order, len(tokens)), -1, -1):
            key = tuple(tokens[len(tokens) - length :]) if length else ()
            counts = self._tables[length].get(key)
            if counts:
                total = sum(counts.values())
                dist = TokenDistribution.from_probs(
                    {tok: n / total for tok, n in counts.items()}
                )
                return TokenDistribution(dist.top(top_k), presorted=True)
        return TokenDistribution([])

    def count_tokens(self, text: str) -> int:
        return len(tokenize(text, self.tokenizer))

    def append_token(self, context: str, token: str) -> str:
        if self.tokenizer == "whitespace":
            if context and not context[-1].isspace():
                return context + " " + token
        return context + token


def train_ngram(
    corpus: str, order: int, tokenizer: str = "codepoint", name: str = "ngram"
) -> NgramProvider:
    """Train an n-gram provider on a corpus string."""
    return NgramProvider.train(corpus, order, tokenizer, name)


# -- remote provider -----------------------------------------------------------


@dataclass
class ProviderConfig:
    """Serializable provider selection; auth tokens stay in the environment."""

    kind: str  # table | ngram | remote
    rules: dict[str, dict[str, float]] | str | None = None  # inline rules or "m1"
    default: dict[str, float] | None = None
    order: int | None = None
    corpus_path: str | None = None
    tokenizer: str = "codepoint"
    base_url: str | None = None
    model: str | None = None
    auth_env: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in ("table", "ngram", "remote"):
            raise ValueError(f"unknown provider kind: {self.kind!r}")
        if self.kind == "remote" and not (self.base_url and self.model):
            raise ValueError("remote provider requires base_url and model")
        if self.kind == "ngram" and (self.order is None or self.order < 1):
            raise ValueError("ngram provider requires order >= 1")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for key in (
            "rules",
            "default",
            "order",
            "corpus_path",
            "base_url",
            "model",
            "auth_env",
        ):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.kind == "ngram":
            out["tokenizer"] = self.tokenizer
        if self.kind == "remote":
            out["timeout"] = self.timeout
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ProviderConfig:
        kwargs = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**kwargs)


class RemoteProvider(Provider):
    """OpenAI-style completions endpoint with token logprobs.

    Transport failures are retried ``max_retries`` times; the resulting
    ProviderError carries the attempt count. At most ``max_in_flight``
    requests run concurrently. A custom httpx transport can be injected
    for fixture replay in tests.
    """

    def __init__(
        self,
        config: ProviderConfig,
        transport: httpx.BaseTransport | None = None,
        max_retries: int = 2,
        max_in_flight: int = 4,
    ):
        if config.kind != "remote":
            raise ValueError("RemoteProvider requires a remote config")
        self.config = config
        self.name = f"remote:{config.model}"
        self.max_retries = max_retries
        self._gate = threading.BoundedSemaphore(max_in_flight)
        headers = {}
        token = os.environ.get(config.auth_env, "") if config.auth_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=config.base_url or "",
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        attempts = 0
        last: Exception | None = None
        with self._gate:
            while attempts <= self.max_retries:
                attempts += 1
                try:
                    response = self._client.post("/completions", json=body)
                    response.raise_for_status()
                    return response.json()
                except httpx.HTTPError as exc:
                    last = exc
        raise ProviderError(f"remote provider failed: {last}", attempts=attempts)

    def next_distribution(self, context: str, top_k: int) -> TokenDistribution:
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        data = self._post(
            {
                "model": self.config.model,
                "prompt": context,
                "max_tokens": 1,
                "temperature": 0,
                "logprobs": top_k,
            }
        )
        try:
            top = data["choices"][0]["logprobs"]["top_logprobs"][0]
        except (KeyError, IndexError, TypeError):
            raise ProviderError("remote provider did not return logprobs") from None
        dist = TokenDistribution.from_probs(
            {tok: math.exp(lp) for tok, lp in top.items()}
        )
        return TokenDistribution(dist.top(top_k), presorted=True)

    def complete(self, context: str, params: GenerationParams) -> Completion:
        body: dict[str, Any] = {
            "model": self.config.model,
            "prompt": context,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "logprobs": 1,
        }
        if params.stop:
            body["stop"] = list(params.stop)
        data = self._post(body)
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError):
            raise ProviderError("remote provider returned no choices") from None
        logprobs = choice.get("logprobs") or {}
        reason = {
            "length": STOP_MAX_TOKENS,
            "stop": STOP_SEQUENCE,
        }.get(choice.get("finish_reason", "length"), STOP_MAX_TOKENS)
        return Completion(
            text=choice.get("text", ""),
            tokens=list(logprobs.get("tokens", [])),
            logprobs=[float(x) for x in logprobs.get("token_logprobs", [])],
            stop_reason=reason,
        )

    def count_tokens(self, text: str) -> int:
        # codepoints/4 heuristic; approximate by design
        return math.ceil(len(text) / 4)


def fixture_transport(path: str | Path) -> httpx.MockTransport:
    """Replay transport from a file of recorded request/response pairs.

    The fixture is a JSON list of ``{"request": {"method", "path", "json"},
    "response": {"status", "json"}}`` objects; each recorded pair is
    consumed at most once and requests are matched on method, path, and
    canonicalized body.
    """
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    pending = list(records)

    def _key(method: str, url_path: str, body: Any) -> str:
        return f"{method} {url_path} {json.dumps(body, sort_keys=True)}"

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content.decode("utf-8")) if request.content else None
        want = _key(request.method, request.url.path, body)
        for i, record in enumerate(pending):
            req = record["request"]
            if _key(req.get("method", "POST"), req["path"], req.get("json")) == want:
                pending.pop(i)
                resp = record["response"]
                return httpx.Response(resp.get("status", 200), json=resp.get("json"))
        return httpx.Response(499, json={"error": f"no recorded response for {want}"})

    return httpx.MockTransport(handler)


# -- construction from config ----------------------------------------------------


def provider_from_config(
    config: ProviderConfig, *, transport: httpx.BaseTransport | None = None
) -> Provider:
    """Instantiate the provider a config describes."""
    if config.kind == "table":
        if config.rules == "m1" or config.rules is None:
            return TableProvider.m1()
        return TableProvider(config.rules, config.default)
    if config.kind == "ngram":
        if not config.corpus_path:
            raise ValueError("ngram config requires corpus_path")
        try:
            corpus = Path(config.corpus_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ProviderError(f"cannot read n-gram corpus: {exc}") from exc
        return NgramProvider.train(corpus, config.order or 1, config.tokenizer)
    return RemoteProvider(config, transport=transport)
