"""HTTP facade over open documents, with jobs and a mutation event stream.

Every mutation commits through a per-document single-writer lock, bumps
that document's sequence number, and is broadcast exactly once on the
server-sent-events stream. Clients may send their last-seen sequence
number (``if_seq``) with any mutation; a stale number yields a 409 with
the events the client missed. Generation runs as named jobs: POST returns
a job id immediately, node-created events stream as the expansion commits,
and DELETE cancels.

The facade is deliberately thin: every endpoint is a direct call into the
library, so service behavior and library behavior cannot drift apart.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import uuid
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import annotations as ann
from . import memory as memory_mod
from . import new_document
from . import tools as tools_mod
from .branching import BranchPolicy, adaptive_expand, generate_siblings
from .errors import (
    AnnotationError,
    GenerationError,
    InvariantViolation,
    LoomError,
    MemoryStoreError,
    NodeNotFound,
    PersistenceError,
    ProviderError,
    TemplateError,
    TopologyError,
)
from .graph import Document
from .persistence import Autosaver, document_to_payload, load, save
from .providers import GenerationParams, Provider, ProviderConfig, provider_from_config
from .search import SearchScope, export_linear, read_view, search

logger = logging.getLogger(__name__)

EVENT_LOG_LIMIT = 10_000


@dataclass
class Event:
    seq: int
    kind: str
    data: dict[str, Any]

    def as_sse(self) -> str:
        payload = json.dumps({"seq": self.seq, "kind": self.kind, "data": self.data})
        return f"id: {self.seq}\nevent: {self.kind}\ndata: {payload}\n\n"


@dataclass
class Job:
    id: str
    kind: str
    state: str = "running"  # running | done | error | cancelled
    report: dict[str, Any] | None = None
    error: str | None = None
    cancel: threading.Event = field(default_factory=threading.Event)
    thread: threading.Thread | None = None


class DocSession:
    """One open document: its lock, sequence number, events, and jobs."""

    def __init__(
        self, doc_id: str, doc: Document, path: Path | None = None, max_jobs: int = 2
    ):
        self.id = doc_id
        self.doc = doc
        self.path = path
        self.lock = threading.RLock()
        self.seq = 0
        self.events: list[Event] = []
        self.subscribers: list[queue.Queue[Event]] = []
        self.jobs: dict[str, Job] = {}
        self.job_gate = threading.BoundedSemaphore(max_jobs)
        self._provider: Provider | None = None
        self.autosaver = (
            Autosaver(path.parent / ".autosave", prefix=path.name) if path else None
        )

    def emit(self, kind: str, data: dict[str, Any]) -> Event:
        """Record and broadcast one mutation; caller must hold the lock."""
        self.seq += 1
        event = Event(seq=self.seq, kind=kind, data=data)
        self.events.append(event)
        if len(self.events) > EVENT_LOG_LIMIT:
            del self.events[: len(self.events) - EVENT_LOG_LIMIT]
        for q in list(self.subscribers):
            q.put(event)
        return event

    def provider(self) -> Provider:
        if self._provider is None:
            if self.doc.provider_config is None:
                raise ProviderError("document has no provider configured")
            self._provider = provider_from_config(self.doc.provider_config)
        return self._provider


@dataclass
class ServerConfig:
    doc_dir: Path | None = None
    token: str | None = None
    autosave_interval: float = 30.0
    max_concurrent_jobs: int = 2  # generation jobs per document


class ServerState:
    def __init__(self, config: ServerConfig | None = None):
        self.config = config or ServerConfig()
        self.sessions: dict[str, DocSession] = {}

    def session(self, doc_id: str) -> DocSession:
        try:
            return self.sessions[doc_id]
        except KeyError:
            raise HTTPException(
                404, {"code": "not_found", "message": f"unknown document {doc_id}"}
            ) from None

    def flush(self) -> None:
        for session in self.sessions.values():
            with session.lock:
                if session.path and session.doc.dirty:
                    save(session.doc, session.path)
                if session.autosaver:
                    session.autosaver.tick(session.doc)


# -- request bodies -------------------------------------------------------------


class OpenDoc(BaseModel):
    path: str | None = None
    prompt: str = ""
    id_seed: int | None = None
    provider: dict[str, Any] | None = None


class CreateNode(BaseModel):
    parent: str
    text: str
    if_seq: int | None = None


class PatchNode(BaseModel):
    text: str | None = None
    flags: dict[str, bool] | None = None
    if_seq: int | None = None


class SplitBody(BaseModel):
    offset: int
    if_seq: int | None = None


class MergeBody(BaseModel):
    if_seq: int | None = None


class ReparentBody(BaseModel):
    add: list[str] = []
    remove: list[str] = []
    new_active: str | None = None
    if_seq: int | None = None


class GenerateBody(BaseModel):
    n: int = 1
    params: dict[str, Any] | None = None
    if_seq: int | None = None


class ExpandBody(BaseModel):
    tau: float
    branch_cap: int | None = None
    segment_token_budget: int = 16
    total_node_budget: int = 64
    params: dict[str, Any] | None = None
    if_seq: int | None = None


class MemoryBody(BaseModel):
    text: str
    keys: list[str] | None = None
    scope: str | None = None
    if_seq: int | None = None


class ToolBody(BaseModel):
    node: str
    vars: dict[str, str] = {}
    if_seq: int | None = None


# -- app ------------------------------------------------------------------------

_ERROR_STATUS: list[tuple[type[Exception], int, str]] = [
    (NodeNotFound, 404, "not_found"),
    (TopologyError, 400, "topology"),
    (AnnotationError, 400, "annotation"),
    (MemoryStoreError, 400, "memory"),
    (TemplateError, 400, "template"),
    (PersistenceError, 400, "document"),
    (GenerationError, 502, "provider"),
    (ProviderError, 502, "provider"),
    (InvariantViolation, 500, "invariant"),
    (LoomError, 400, "invalid"),
    (ValueError, 400, "invalid"),
]


def create_app(state: ServerState | None = None) -> FastAPI:
    state = state or ServerState()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        stop = threading.Event()
        ticker = threading.Thread(
            target=_autosave_loop, args=(state, stop), daemon=True
        )
        ticker.start()
        try:
            yield
        finally:
            stop.set()
            state.flush()

    app = FastAPI(title="loom", lifespan=lifespan)
    app.state.loom = state

    def auth(authorization: str | None = Header(default=None)) -> None:
        if state.config.token is None:
            return
        if authorization != f"Bearer {state.config.token}":
            raise HTTPException(
                401, {"code": "unauthorized", "message": "missing or bad token"}
            )

    for exc_type, status, code in _ERROR_STATUS:
        def _make(status: int, code: str):
            async def handler(request: Request, exc: Exception):
                details: dict[str, Any] = {}
                if isinstance(exc, GenerationError):
                    details["created"] = exc.created
                if isinstance(exc, InvariantViolation):
                    details["problems"] = exc.problems
                return JSONResponse(
                    status_code=status,
                    content={"code": code, "message": str(exc), "details": details},
                )

            return handler

        app.add_exception_handler(exc_type, _make(status, code))

    @app.exception_handler(RequestValidationError)
    async def bad_envelope(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={
                "code": "validation",
                "message": "malformed request envelope",
                "details": {"errors": exc.errors()},
            },
        )

    @app.exception_handler(StarletteHTTPException)
    async def flat_http_error(request: Request, exc: StarletteHTTPException):
        # error bodies are always flat {code, message, details}
        if isinstance(exc.detail, dict) and "code" in exc.detail:
            body = {
                "code": exc.detail["code"],
                "message": exc.detail.get("message", ""),
                "details": exc.detail.get("details", {}),
            }
        else:
            body = {"code": "error", "message": str(exc.detail), "details": {}}
        return JSONResponse(status_code=exc.status_code, content=body)

    def mutate(session: DocSession, if_seq: int | None, kind: str, fn) -> dict[str, Any]:
        """Run one mutation under the lock with optimistic concurrency."""
        with session.lock:
            if if_seq is not None and if_seq != session.seq:
                missed = [
                    {"seq": e.seq, "kind": e.kind, "data": e.data}
                    for e in session.events
                    if e.seq > if_seq
                ]
                raise HTTPException(
                    409,
                    {
                        "code": "conflict",
                        "message": f"stale sequence number {if_seq}, now {session.seq}",
                        "details": {"current_seq": session.seq, "missed": missed},
                    },
                )
            data = fn()
            event = session.emit(kind, data)
            return {"seq": event.seq, **data}

    # -- documents ---------------------------------------------------------

    @app.get("/api/docs", dependencies=[Depends(auth)])
    def list_docs():
        return {
            "docs": [
                {
                    "id": s.id,
                    "path": str(s.path) if s.path else None,
                    "seq": s.seq,
                    "nodes": len(s.doc.nodes),
                }
                for s in state.sessions.values()
            ]
        }

    @app.post("/api/docs", dependencies=[Depends(auth)])
    def open_doc(body: OpenDoc):
        path: Path | None = None
        if body.path is not None:
            path = Path(body.path)
            if state.config.doc_dir is not None:
                path = (state.config.doc_dir / path).resolve()
                if not str(path).startswith(str(state.config.doc_dir.resolve())):
                    raise HTTPException(
                        400, {"code": "invalid", "message": "path escapes document dir"}
                    )
        if path is not None and path.exists():
            doc = load(path)
        else:
            doc = new_document(body.prompt, id_seed=body.id_seed)
        if body.provider is not None:
            doc.provider_config = ProviderConfig.from_dict(body.provider)
        doc_id = uuid.uuid4().hex[:8]
        state.sessions[doc_id] = DocSession(
            doc_id, doc, path, max_jobs=state.config.max_concurrent_jobs
        )
        return {"id": doc_id, "seq": 0, "root": doc.root}

    @app.get("/api/doc/{doc_id}", dependencies=[Depends(auth)])
    def get_doc(doc_id: str):
        session = state.session(doc_id)
        with session.lock:
            return {"seq": session.seq, "document": document_to_payload(session.doc)}

    # -- node mutations ------------------------------------------------------

    @app.post("/api/doc/{doc_id}/nodes", dependencies=[Depends(auth)])
    def create_node(doc_id: str, body: CreateNode):
        session = state.session(doc_id)

        def fn():
            node = session.doc.create_child(body.parent, body.text)
            return {"node": node, "parent": body.parent}

        return mutate(session, body.if_seq, "node-created", fn)

    @app.patch("/api/doc/{doc_id}/node/{node_id}", dependencies=[Depends(auth)])
    def patch_node(doc_id: str, node_id: str, body: PatchNode):
        session = state.session(doc_id)

        def fn():
            if body.text is not None:
                session.doc.set_text(node_id, body.text)
            for flag, on in (body.flags or {}).items():
                ann.set_flag(session.doc, node_id, flag, on)
            node = session.doc.node(node_id)
            return {"node": node_id, "text": node.text, "flags": sorted(node.flags)}

        return mutate(session, body.if_seq, "node-updated", fn)

    @app.post("/api/doc/{doc_id}/node/{node_id}/split", dependencies=[Depends(auth)])
    def split_node(doc_id: str, node_id: str, body: SplitBody):
        session = state.session(doc_id)

        def fn():
            upper, lower = session.doc.split_node(node_id, body.offset)
            return {"upper": upper, "lower": lower}

        return mutate(session, body.if_seq, "node-split", fn)

    @app.post("/api/doc/{doc_id}/node/{node_id}/merge", dependencies=[Depends(auth)])
    def merge_node(doc_id: str, node_id: str, body: MergeBody | None = None):
        session = state.session(doc_id)

        def fn():
            parent = session.doc.merge_with_parent(node_id)
            return {"node": parent, "merged": node_id}

        return mutate(session, body.if_seq if body else None, "node-merged", fn)

    @app.post("/api/doc/{doc_id}/node/{node_id}/reparent", dependencies=[Depends(auth)])
    def reparent_node(doc_id: str, node_id: str, body: ReparentBody):
        session = state.session(doc_id)

        def fn():
            session.doc.reparent(node_id, body.add, body.remove, body.new_active)
            node = session.doc.node(node_id)
            return {
                "node": node_id,
                "parents": list(node.parents),
                "active_parent": node.active_parent,
            }

        return mutate(session, body.if_seq, "node-reparented", fn)

    @app.delete("/api/doc/{doc_id}/node/{node_id}", dependencies=[Depends(auth)])
    def delete_node(doc_id: str, node_id: str, if_seq: int | None = None):
        session = state.session(doc_id)

        def fn():
            count = session.doc.delete_subtree(node_id)
            return {"node": node_id, "deleted": count}

        return mutate(session, if_seq, "node-deleted", fn)

    # -- generation jobs -------------------------------------------------------

    def _start_job(session: DocSession, kind: str, target) -> dict[str, Any]:
        job = Job(id=uuid.uuid4().hex[:8], kind=kind)
        session.jobs[job.id] = job

        def run():
            try:
                with session.job_gate, session.lock:
                    report = target(job)
                    job.report = report
                    job.state = "cancelled" if job.cancel.is_set() else "done"
                    session.emit("job-done", {"job": job.id, "kind": kind, **report})
            except Exception as exc:  # job errors surface via status + stream
                job.state = "error"
                job.error = str(exc)
                with session.lock:
                    session.emit("job-error", {"job": job.id, "message": str(exc)})

        job.thread = threading.Thread(target=run, daemon=True)
        job.thread.start()
        return {"job": job.id}

    @app.post("/api/doc/{doc_id}/node/{node_id}/generate", dependencies=[Depends(auth)])
    def generate(doc_id: str, node_id: str, body: GenerateBody):
        session = state.session(doc_id)
        session.doc.node(node_id)
        provider = session.provider()
        params = GenerationParams.from_dict(body.params or {})
        if body.if_seq is not None and body.if_seq != session.seq:
            raise HTTPException(
                409,
                {
                    "code": "conflict",
                    "message": f"stale sequence number {body.if_seq}, now {session.seq}",
                    "details": {"current_seq": session.seq},
                },
            )

        def target(job: Job):
            created = generate_siblings(
                session.doc,
                node_id,
                body.n,
                params,
                provider,
                on_created=lambda nid: session.emit(
                    "node-created",
                    {"node": nid, "parent": node_id, "job": job.id},
                ),
                cancel=job.cancel,
            )
            return {"created": created}

        return _start_job(session, "generate", target)

    @app.post("/api/doc/{doc_id}/node/{node_id}/expand", dependencies=[Depends(auth)])
    def expand(doc_id: str, node_id: str, body: ExpandBody):
        session = state.session(doc_id)
        session.doc.node(node_id)
        provider = session.provider()
        policy = BranchPolicy(
            tau=body.tau,
            branch_cap=body.branch_cap,
            segment_token_budget=body.segment_token_budget,
            total_node_budget=body.total_node_budget,
            params=GenerationParams.from_dict(body.params or {}),
        )

        def target(job: Job):
            report = adaptive_expand(
                session.doc,
                node_id,
                policy,
                provider,
                on_created=lambda nid: session.emit(
                    "node-created",
                    {
                        "node": nid,
                        "parent": session.doc.node(nid).active_parent,
                        "job": job.id,
                    },
                ),
                cancel=job.cancel,
            )
            return {
                "created": report.created,
                "branch_factors": report.branch_factors,
                "stop_reasons": report.stop_reasons,
                "cancelled": report.cancelled,
            }

        return _start_job(session, "expand", target)

    @app.get("/api/doc/{doc_id}/job/{job_id}", dependencies=[Depends(auth)])
    def job_status(doc_id: str, job_id: str):
        session = state.session(doc_id)
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, {"code": "not_found", "message": f"unknown job {job_id}"})
        return {"id": job.id, "kind": job.kind, "state": job.state,
                "report": job.report, "error": job.error}

    @app.delete("/api/doc/{doc_id}/job/{job_id}", dependencies=[Depends(auth)])
    def cancel_job(doc_id: str, job_id: str):
        session = state.session(doc_id)
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, {"code": "not_found", "message": f"unknown job {job_id}"})
        job.cancel.set()
        return {"id": job.id, "state": job.state}

    # -- reads ------------------------------------------------------------------

    @app.get("/api/doc/{doc_id}/search", dependencies=[Depends(auth)])
    def search_doc(
        doc_id: str,
        q: str,
        scope: str = "all",
        node: str | None = None,
        case_sensitive: bool = False,
    ):
        session = state.session(doc_id)
        with session.lock:
            matches = search(
                session.doc, q, SearchScope(scope, node), case_sensitive=case_sensitive
            )
        return {
            "matches": [
                {"node": m.node, "start": m.start, "end": m.end, "snippet": m.snippet}
                for m in matches
            ]
        }

    @app.get("/api/doc/{doc_id}/node/{node_id}/read", dependencies=[Depends(auth)])
    def read_node(doc_id: str, node_id: str):
        session = state.session(doc_id)
        with session.lock:
            return PlainTextResponse(read_view(session.doc, node_id))

    @app.get("/api/doc/{doc_id}/export", dependencies=[Depends(auth)])
    def export_doc(doc_id: str, node: str | None = None, chapters: bool = False):
        session = state.session(doc_id)
        with session.lock:
            target = node or session.doc.root
            return PlainTextResponse(export_linear(session.doc, target, chapters))

    # -- memory and tools ----------------------------------------------------------

    @app.post("/api/doc/{doc_id}/memory", dependencies=[Depends(auth)])
    def save_memory(doc_id: str, body: MemoryBody):
        session = state.session(doc_id)

        def fn():
            entry = memory_mod.save_entry(
                session.doc,
                body.text,
                set(body.keys) if body.keys is not None else None,
                body.scope,
            )
            return {
                "entry": entry.id,
                "keys": sorted(entry.keys),
                "scope": entry.scope,
            }

        return mutate(session, body.if_seq, "memory-saved", fn)

    @app.post("/api/doc/{doc_id}/tools/{name}/run", dependencies=[Depends(auth)])
    def run_tool_endpoint(doc_id: str, name: str, body: ToolBody):
        session = state.session(doc_id)
        provider = session.provider()

        def fn():
            result = tools_mod.run_tool(
                session.doc, name, body.node, body.vars, provider
            )
            return {
                "tool": name,
                "text": result.text,
                "effect": result.effect,
                "target": result.target,
            }

        return mutate(session, body.if_seq, "tool-run", fn)

    # -- events -----------------------------------------------------------------

    @app.get("/api/doc/{doc_id}/events", dependencies=[Depends(auth)])
    def events(doc_id: str, since: int = 0, live: bool = True):
        session = state.session(doc_id)

        def stream() -> Iterator[str]:
            q: queue.Queue[Event] = queue.Queue()
            with session.lock:
                backlog = [e for e in session.events if e.seq > since]
                if live:
                    session.subscribers.append(q)
            last = since
            try:
                for event in backlog:
                    yield event.as_sse()
                    last = event.seq
                if not live:
                    return
                while True:
                    try:
                        event = q.get(timeout=15.0)
                    except queue.Empty:
                        yield ": keep-alive\n\n"
                        continue
                    if event.seq > last:
                        yield event.as_sse()
                        last = event.seq
            finally:
                if live:
                    with session.lock:
                        if q in session.subscribers:
                            session.subscribers.remove(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _autosave_loop(state: ServerState, stop: threading.Event) -> None:
    while not stop.wait(state.config.autosave_interval):
        for session in list(state.sessions.values()):
            if session.autosaver is None:
                continue
            with session.lock:
                session.autosaver.tick(session.doc)


def serve(
    host: str = "127.0.0.1",
    port: int = 8376,
    doc_dir: str | Path | None = None,
    token: str | None = None,
) -> None:
    """Run the service with uvicorn (blocking)."""
    import uvicorn

    if doc_dir is not None and not Path(doc_dir).is_dir():
        raise PersistenceError(f"document directory not readable: {doc_dir}")
    config = ServerConfig(
        doc_dir=Path(doc_dir) if doc_dir else None, token=token
    )
    uvicorn.run(create_app(ServerState(config)), host=host, port=port)
