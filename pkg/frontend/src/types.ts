// Wire types for the /api endpoints; mirrors the document file schema
// (docs/format.md in the repository root).

export interface GenMeta {
  provider: string;
  params: Record<string, unknown>;
  tokens: string[];
  logprobs: number[];
}

export interface NodePayload {
  text: string;
  parents: string[];
  active_parent: string | null;
  children_order: string[];
  flags: string[];
  gen_meta: GenMeta | null;
}

export interface Chapter {
  id: string;
  title: string;
  root_node: string;
}

export interface FloatingNote {
  id: string;
  title: string;
  body: string;
  scope: string | null;
  created_at: number;
}

export interface MemoryEntry {
  id: string;
  text: string;
  keys: string[];
  scope: string | null;
  created_at: number;
}

export interface DocumentPayload {
  root: string;
  nodes: Record<string, NodePayload>;
  chapters: Chapter[];
  bookmarks: Record<string, string>;
  tags: Record<string, string[]>;
  notes: FloatingNote[];
  memory: MemoryEntry[];
  templates: unknown[];
  provider: Record<string, unknown> | null;
}

export interface Snapshot {
  seq: number;
  document: DocumentPayload;
}

export interface StreamEvent {
  seq: number;
  kind: string;
  data: Record<string, unknown>;
}

export interface ErrorBody {
  code: string;
  message: string;
  details: Record<string, unknown>;
}

export interface ExpandPolicy {
  tau: number;
  branch_cap?: number | null;
  segment_token_budget?: number;
  total_node_budget?: number;
  params?: Record<string, unknown>;
}

export interface SearchMatch {
  node: string;
  start: number;
  end: number;
  snippet: string;
}
