// Thin typed client over the /api endpoints. All story text comes from the
// server; the client never assembles histories itself.

import type {
  DocumentPayload,
  ErrorBody,
  ExpandPolicy,
  SearchMatch,
  Snapshot,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; text(): Promise<string> }>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: ErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike,
    private token?: string,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await res.text();
    if (res.status >= 400) {
      let parsed: ErrorBody;
      try {
        parsed = JSON.parse(text) as ErrorBody;
      } catch {
        parsed = { code: "error", message: text, details: {} };
      }
      throw new ApiError(res.status, parsed);
    }
    return JSON.parse(text) as T;
  }

  private async requestText(path: string): Promise<string> {
    const headers: Record<string, string> = {};
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const res = await this.fetchFn(this.baseUrl + path, { headers });
    const text = await res.text();
    if (res.status >= 400) {
      throw new ApiError(res.status, { code: "error", message: text, details: {} });
    }
    return text;
  }

  openDoc(body: {
    path?: string;
    prompt?: string;
    id_seed?: number;
    provider?: Record<string, unknown>;
  }): Promise<{ id: string; seq: number; root: string }> {
    return this.request("POST", "/api/docs", body);
  }

  getDoc(docId: string): Promise<Snapshot> {
    return this.request("GET", `/api/doc/${docId}`);
  }

  createNode(
    docId: string,
    parent: string,
    text: string,
    ifSeq?: number,
  ): Promise<{ seq: number; node: string }> {
    return this.request("POST", `/api/doc/${docId}/nodes`, {
      parent,
      text,
      if_seq: ifSeq,
    });
  }

  patchNode(
    docId: string,
    node: string,
    patch: { text?: string; flags?: Record<string, boolean>; if_seq?: number },
  ): Promise<{ seq: number; node: string; text: string; flags: string[] }> {
    return this.request("PATCH", `/api/doc/${docId}/node/${node}`, patch);
  }

  splitNode(
    docId: string,
    node: string,
    offset: number,
    ifSeq?: number,
  ): Promise<{ seq: number; upper: string; lower: string }> {
    return this.request("POST", `/api/doc/${docId}/node/${node}/split`, {
      offset,
      if_seq: ifSeq,
    });
  }

  mergeNode(docId: string, node: string): Promise<{ seq: number; node: string }> {
    return this.request("POST", `/api/doc/${docId}/node/${node}/merge`, {});
  }

  reparentNode(
    docId: string,
    node: string,
    body: { add?: string[]; remove?: string[]; new_active?: string | null },
  ): Promise<{ seq: number; node: string }> {
    return this.request("POST", `/api/doc/${docId}/node/${node}/reparent`, body);
  }

  deleteNode(docId: string, node: string): Promise<{ seq: number; deleted: number }> {
    return this.request("DELETE", `/api/doc/${docId}/node/${node}`);
  }

  expand(docId: string, node: string, policy: ExpandPolicy): Promise<{ job: string }> {
    return this.request("POST", `/api/doc/${docId}/node/${node}/expand`, policy);
  }

  generate(
    docId: string,
    node: string,
    n: number,
    params?: Record<string, unknown>,
  ): Promise<{ job: string }> {
    return this.request("POST", `/api/doc/${docId}/node/${node}/generate`, { n, params });
  }

  jobStatus(
    docId: string,
    jobId: string,
  ): Promise<{ id: string; state: string; report: Record<string, unknown> | null }> {
    return this.request("GET", `/api/doc/${docId}/job/${jobId}`);
  }

  cancelJob(docId: string, jobId: string): Promise<{ id: string; state: string }> {
    return this.request("DELETE", `/api/doc/${docId}/job/${jobId}`);
  }

  search(
    docId: string,
    q: string,
    scope = "all",
    node?: string,
  ): Promise<{ matches: SearchMatch[] }> {
    const params = new URLSearchParams({ q, scope });
    if (node) params.set("node", node);
    return this.request("GET", `/api/doc/${docId}/search?${params}`);
  }

  /** Single-history text, straight from the server (anti-drift contract). */
  read(docId: string, node: string): Promise<string> {
    return this.requestText(`/api/doc/${docId}/node/${node}/read`);
  }

  exportLinear(docId: string, node: string, chapters = false): Promise<string> {
    return this.requestText(
      `/api/doc/${docId}/export?node=${node}&chapters=${chapters}`,
    );
  }

  saveMemory(
    docId: string,
    text: string,
    keys?: string[],
    scope?: string,
  ): Promise<{ seq: number; entry: string }> {
    return this.request("POST", `/api/doc/${docId}/memory`, { text, keys, scope });
  }

  runTool(
    docId: string,
    name: string,
    node: string,
    vars: Record<string, string>,
  ): Promise<{ seq: number; text: string; effect: string; target: string | null }> {
    return this.request("POST", `/api/doc/${docId}/tools/${name}/run`, { node, vars });
  }

  eventsText(docId: string, since = 0): Promise<string> {
    return this.requestText(`/api/doc/${docId}/events?since=${since}&live=false`);
  }
}

export function documentOf(snapshot: Snapshot): DocumentPayload {
  return snapshot.document;
}
