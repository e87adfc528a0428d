// Test scaffolding: document builders and a contract-faithful fake server
// backed by responses recorded from the real service.

import type { FetchLike } from "../src/api.js";
import type { DocumentPayload, NodePayload, Snapshot, StreamEvent } from "../src/types.js";

export function makeNode(partial: Partial<NodePayload> = {}): NodePayload {
  return {
    text: "x",
    parents: [],
    active_parent: null,
    children_order: [],
    flags: [],
    gen_meta: null,
    ...partial,
  };
}

export function makeDoc(nodes: Record<string, NodePayload>, root: string): DocumentPayload {
  return {
    root,
    nodes,
    chapters: [],
    bookmarks: {},
    tags: {},
    notes: [],
    memory: [],
    templates: [],
    provider: null,
  };
}

/** A chain root -> n1 -> n2 ... of the given length. */
export function chainDoc(length: number): DocumentPayload {
  const nodes: Record<string, NodePayload> = {
    root: makeNode({ text: "root" }),
  };
  let prev = "root";
  for (let i = 1; i < length; i++) {
    const id = `n${i}`;
    nodes[id] = makeNode({ text: `t${i}`, parents: [prev], active_parent: prev });
    nodes[prev]!.children_order.push(id);
    prev = id;
  }
  return makeDoc(nodes, "root");
}

/** Deterministic pseudo-random tree with the given node count. */
export function randomDoc(count: number, seed = 1234): DocumentPayload {
  let state = seed >>> 0;
  const rand = () => {
    // LCG; deterministic across runs
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
  const doc = chainDoc(1);
  const ids = ["root"];
  for (let i = 1; i < count; i++) {
    const parent = ids[Math.floor(rand() * ids.length)]!;
    const id = `n${i}`;
    doc.nodes[id] = makeNode({ text: `t${i}`, parents: [parent], active_parent: parent });
    doc.nodes[parent]!.children_order.push(id);
    ids.push(id);
  }
  return doc;
}

export interface Fixture {
  open: { id: string; seq: number; root: string };
  snapshot_before: Snapshot;
  snapshot_after: Snapshot;
  expand_request: Record<string, unknown>;
  events: StreamEvent[];
  events_sse_text: string;
  job_final: { id: string; state: string; report: { created: string[] } };
  read: Record<string, string>;
}

const clone = <T>(value: T): T => JSON.parse(JSON.stringify(value)) as T;

/** In-memory server honoring the wire contract, seeded with recorded state. */
export class FakeServer {
  snapshot: Snapshot;
  events: StreamEvent[] = [];
  private jobCounter = 0;

  constructor(private fixture: Fixture) {
    this.snapshot = clone(fixture.snapshot_before);
  }

  get docId(): string {
    return this.fixture.open.id;
  }

  private emit(kind: string, data: Record<string, unknown>): StreamEvent {
    const event = { seq: this.snapshot.seq + 1, kind, data };
    this.snapshot.seq = event.seq;
    this.events.push(event);
    return event;
  }

  fetch: FetchLike = (rawUrl, init) => {
    const url = new URL(rawUrl, "http://fake");
    const body = init?.body ? (JSON.parse(init.body) as Record<string, unknown>) : {};
    const method = init?.method ?? "GET";
    const respond = (status: number, payload: unknown, raw = false) =>
      Promise.resolve({
        status,
        text: () => Promise.resolve(raw ? String(payload) : JSON.stringify(payload)),
      });

    const parts = url.pathname.split("/").filter(Boolean); // api, doc, {id}, ...
    if (parts[0] !== "api") return respond(404, { code: "not_found", message: "", details: {} });

    if (parts[1] === "doc" && parts[3] === "node" && parts[5] === "read") {
      const text = this.fixture.read[parts[4]!];
      if (text === undefined) {
        return respond(404, { code: "not_found", message: "no recorded read", details: {} });
      }
      return respond(200, text, true);
    }

    if (parts[1] === "doc" && parts.length === 3 && method === "GET") {
      return respond(200, clone(this.snapshot));
    }

    if (parts[3] === "node" && method === "PATCH") {
      const nodeId = parts[4]!;
      const ifSeq = body["if_seq"];
      if (typeof ifSeq === "number" && ifSeq !== this.snapshot.seq) {
        return respond(409, {
          code: "conflict",
          message: `stale sequence number ${ifSeq}, now ${this.snapshot.seq}`,
          details: { current_seq: this.snapshot.seq, missed: [] },
        });
      }
      const node = this.snapshot.document.nodes[nodeId];
      if (!node) return respond(404, { code: "not_found", message: nodeId, details: {} });
      if (typeof body["text"] === "string") node.text = body["text"];
      const event = this.emit("node-updated", { node: nodeId, text: node.text });
      return respond(200, { seq: event.seq, node: nodeId, text: node.text, flags: node.flags });
    }

    if (parts[5] === "expand" && method === "POST") {
      // replay the recorded expansion: authoritative snapshot + its events
      this.snapshot = clone(this.fixture.snapshot_after);
      this.events.push(...clone(this.fixture.events));
      const job = this.fixture.events.find((e) => e.kind === "job-done")!.data["job"];
      this.jobCounter += 1;
      return respond(200, { job });
    }

    if (parts[3] === "job" && method === "GET") {
      return respond(200, clone(this.fixture.job_final));
    }

    if (parts[3] === "events") {
      const since = Number(url.searchParams.get("since") ?? "0");
      const text = this.events
        .filter((e) => e.seq > since)
        .map((e) => `id: ${e.seq}\nevent: ${e.kind}\ndata: ${JSON.stringify(e)}\n\n`)
        .join("");
      return respond(200, text, true);
    }

    return respond(404, { code: "not_found", message: url.pathname, details: {} });
  };
}
