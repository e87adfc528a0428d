"""Headless driver: create, expand, search, export, validate, serve.

Every subcommand is a thin wrapper over the library; --json emits the
library's return values unchanged. Exit codes: 0 success, 1 usage,
2 document error, 3 provider error.

Node references accept the literal "root", a bookmark name, a full node
id, or any unique id prefix.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import new_document
from .annotations import set_bookmark
from .branching import BranchPolicy, adaptive_expand, generate_siblings
from .errors import (
    GenerationError,
    InvariantViolation,
    LoomError,
    PersistenceError,
    ProviderError,
)
from .graph import Document
from .persistence import load, save
from .providers import (
    GenerationParams,
    Provider,
    ProviderConfig,
    provider_from_config,
)
from .search import SearchScope, export_linear, read_view, search
from .tools import run_tool

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOCUMENT = 2
EXIT_PROVIDER = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with 2
        raise _UsageError(message)


def resolve_node(doc: Document, ref: str) -> str:
    """Node id from "root", a bookmark name, an id, or a unique id prefix."""
    if ref.lower() == "root":
        return doc.root
    if ref in doc.annotations.bookmarks:
        return doc.annotations.bookmarks[ref]
    if ref in doc.nodes:
        return ref
    hits = [nid for nid in doc.nodes if nid.startswith(ref)]
    if len(hits) == 1:
        return hits[0]
    if not hits:
        raise LoomError(f"no node matches {ref!r}")
    raise LoomError(f"ambiguous node reference {ref!r}: {len(hits)} matches")


def parse_provider_spec(spec: str, args: argparse.Namespace) -> ProviderConfig:
    """Parse --provider specs: table:m1, table:RULES.json, ngram:CORPUS, remote:URL."""
    kind, _, rest = spec.partition(":")
    if kind == "table":
        if rest in ("", "m1"):
            return ProviderConfig(kind="table", rules="m1")
        rules = json.loads(Path(rest).read_text(encoding="utf-8"))
        return ProviderConfig(
            kind="table", rules=rules.get("rules", rules), default=rules.get("default")
        )
    if kind == "ngram":
        if not rest:
            raise _UsageError("ngram provider needs a corpus path: ngram:PATH")
        return ProviderConfig(
            kind="ngram",
            corpus_path=rest,
            order=args.ngram_order,
            tokenizer=args.ngram_tokens,
        )
    if kind == "remote":
        if not rest or not args.model:
            raise _UsageError("remote provider needs remote:URL and --model")
        return ProviderConfig(
            kind="remote", base_url=rest, model=args.model, auth_env=args.auth_env
        )
    raise _UsageError(f"unknown provider spec {spec!r}")


def _provider_for(doc: Document, args: argparse.Namespace) -> Provider:
    if getattr(args, "provider", None):
        config = parse_provider_spec(args.provider, args)
        doc.provider_config = config
    elif doc.provider_config is not None:
        config = doc.provider_config
    else:
        raise _UsageError("no provider: pass --provider or store one in the document")
    return provider_from_config(config)


def _params_from(args: argparse.Namespace) -> GenerationParams:
    return GenerationParams(
        temperature=args.temperature,
        top_p=args.top_p,
        max_tokens=args.max_tokens,
        stop=tuple(args.stop or ()),
        rng_seed=args.seed,
    )


def _emit(args: argparse.Namespace, data: dict, text: str | None = None) -> None:
    if args.json:
        print(json.dumps(data, sort_keys=True, ensure_ascii=False))
    elif text is not None:
        print(text)


def build_parser() -> _Parser:
    parser = _Parser(prog="loom", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--json", action="store_true", help="machine-readable output")

    def generation_flags(p: _Parser) -> None:
        p.add_argument("--provider", help="table:m1 | table:RULES.json | ngram:CORPUS | remote:URL")
        p.add_argument("--ngram-order", type=int, default=2)
        p.add_argument("--ngram-tokens", choices=["codepoint", "whitespace"], default="codepoint")
        p.add_argument("--model", help="remote model name")
        p.add_argument("--auth-env", default="LOOM_API_TOKEN",
                       help="environment variable holding the remote auth token")
        p.add_argument("--temperature", type=float, default=1.0)
        p.add_argument("--top-p", dest="top_p", type=float, default=1.0)
        p.add_argument("--max-tokens", dest="max_tokens", type=int, default=24)
        p.add_argument("--stop", action="append")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("new", help="create a document")
    p.add_argument("path")
    p.add_argument("--prompt", default="", help="root node text")
    p.add_argument("--bookmark", help="bookmark the root under this name")
    p.add_argument("--id-seed", type=int, help="deterministic node id generation")
    p.add_argument("--provider", help="store a provider config in the document")
    p.add_argument("--ngram-order", type=int, default=2)
    p.add_argument("--ngram-tokens", choices=["codepoint", "whitespace"], default="codepoint")
    p.add_argument("--model")
    p.add_argument("--auth-env", default="LOOM_API_TOKEN")
    common(p)

    p = sub.add_parser("expand", help="adaptive expansion under a node")
    p.add_argument("path")
    p.add_argument("--node", required=True)
    p.add_argument("--tau", type=float, default=0.9, help="cumulative probability threshold")
    p.add_argument("--cap", type=int, help="max branches per juncture (default unlimited)")
    p.add_argument("--segment", type=int, default=16, help="token budget per segment")
    p.add_argument("--budget", type=int, default=64, help="total node budget")
    generation_flags(p)
    common(p)

    p = sub.add_parser("siblings", help="generate n fresh continuations")
    p.add_argument("path")
    p.add_argument("--node", required=True)
    p.add_argument("--n", type=int, default=1)
    generation_flags(p)
    common(p)

    p = sub.add_parser("search", help="search document text")
    p.add_argument("path")
    p.add_argument("--q", required=True)
    p.add_argument("--scope", choices=["all", "subtree", "ancestry", "subtree+ancestry"],
                   default="all")
    p.add_argument("--node")
    p.add_argument("--case-sensitive", action="store_true")
    common(p)

    p = sub.add_parser("read", help="single-history text of a node")
    p.add_argument("path")
    p.add_argument("--node", required=True)
    common(p)

    p = sub.add_parser("export", help="export a linear history")
    p.add_argument("path")
    p.add_argument("--node", required=True)
    p.add_argument("--chapters", action="store_true", help="insert chapter headings")
    p.add_argument("-o", "--out", help="write to a file instead of stdout")
    common(p)

    p = sub.add_parser("tools", help="prompt-template tools")
    tool_sub = p.add_subparsers(dest="tool_command", required=True)
    pr = tool_sub.add_parser("run", help="run a stored template at a node")
    pr.add_argument("path")
    pr.add_argument("--template", required=True)
    pr.add_argument("--node", required=True)
    pr.add_argument("--var", action="append", default=[], metavar="NAME=VALUE")
    generation_flags(pr)
    common(pr)

    p = sub.add_parser("validate", help="run the full invariant sweep")
    p.add_argument("path")
    common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8376)
    p.add_argument("--dir", help="document directory")
    p.add_argument("--token-env", help="environment variable holding the shared token")

    return parser


def _cmd_new(args) -> int:
    config = None
    if args.provider:
        config = parse_provider_spec(args.provider, args)
    doc = new_document(args.prompt, id_seed=args.id_seed, provider_config=config)
    if args.bookmark:
        set_bookmark(doc, args.bookmark, doc.root)
    save(doc, args.path)
    _emit(args, {"path": args.path, "root": doc.root}, f"created {args.path} (root {doc.root})")
    return EXIT_OK


def _cmd_expand(args) -> int:
    doc = load(args.path)
    provider = _provider_for(doc, args)
    node = resolve_node(doc, args.node)
    policy = BranchPolicy(
        tau=args.tau,
        branch_cap=args.cap,
        segment_token_budget=args.segment,
        total_node_budget=args.budget,
        params=_params_from(args),
    )
    report = adaptive_expand(doc, node, policy, provider)
    save(doc, args.path)
    data = {
        "created": report.created,
        "branch_factors": report.branch_factors,
        "stop_reasons": report.stop_reasons,
    }
    _emit(args, data, f"created {len(report.created)} nodes under {node}")
    return EXIT_OK


def _cmd_siblings(args) -> int:
    doc = load(args.path)
    provider = _provider_for(doc, args)
    node = resolve_node(doc, args.node)
    created = generate_siblings(doc, node, args.n, _params_from(args), provider)
    save(doc, args.path)
    _emit(args, {"created": created}, f"created {len(created)} siblings under {node}")
    return EXIT_OK


def _cmd_search(args) -> int:
    doc = load(args.path)
    node = resolve_node(doc, args.node) if args.node else None
    matches = search(
        doc, args.q, SearchScope(args.scope, node), case_sensitive=args.case_sensitive
    )
    data = {
        "matches": [
            {"node": m.node, "start": m.start, "end": m.end, "snippet": m.snippet}
            for m in matches
        ]
    }
    lines = "\n".join(f"{m.node}@{m.start}: {m.snippet}" for m in matches)
    _emit(args, data, lines if matches else "no matches")
    return EXIT_OK


def _cmd_read(args) -> int:
    doc = load(args.path)
    text = read_view(doc, resolve_node(doc, args.node))
    _emit(args, {"text": text}, text)
    return EXIT_OK


def _cmd_export(args) -> int:
    doc = load(args.path)
    text = export_linear(doc, resolve_node(doc, args.node), args.chapters)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _emit(args, {"out": args.out, "chars": len(text)}, f"wrote {args.out}")
    else:
        _emit(args, {"text": text}, text)
    return EXIT_OK


def _cmd_tools_run(args) -> int:
    doc = load(args.path)
    provider = _provider_for(doc, args)
    node = resolve_node(doc, args.node)
    vars: dict[str, str] = {}
    for pair in args.var:
        name, sep, value = pair.partition("=")
        if not sep:
            raise _UsageError(f"--var expects NAME=VALUE, got {pair!r}")
        vars[name] = value
    result = run_tool(doc, args.template, node, vars, provider)
    save(doc, args.path)
    data = {"text": result.text, "effect": result.effect, "target": result.target}
    _emit(args, data, result.text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    doc = load(args.path)  # load already runs the sweep; run it again explicitly
    problems = doc.problems()
    if problems:
        _emit(args, {"ok": False, "problems": problems}, "\n".join(problems))
        return EXIT_DOCUMENT
    _emit(args, {"ok": True, "nodes": len(doc.nodes)}, f"ok ({len(doc.nodes)} nodes)")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import os

    from .server import serve

    token = os.environ.get(args.token_env) if args.token_env else None
    serve(host=args.host, port=args.port, doc_dir=args.dir, token=token)
    return EXIT_OK


_COMMANDS = {
    "new": _cmd_new,
    "expand": _cmd_expand,
    "siblings": _cmd_siblings,
    "search": _cmd_search,
    "read": _cmd_read,
    "export": _cmd_export,
    "validate": _cmd_validate,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "tools":
            return _cmd_tools_run(args)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProviderError, GenerationError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (PersistenceError, InvariantViolation, LoomError) as exc:
        print(f"document error: {exc}", file=sys.stderr)
        return EXIT_DOCUMENT


if __name__ == "__main__":
    sys.exit(main())
