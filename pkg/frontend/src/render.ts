// Pure view-model construction: what to draw, with no DOM involved.
// The canonical path is the golden thread; exploratory branches dim.
// Optional per-token heat from generation logprobs surfaces divergent
// junctures inline.

import { layoutTree, type LayoutNode } from "./layout.js";
import type { DocumentPayload } from "./types.js";

export interface NodeView extends LayoutNode {
  label: string;
  canonical: boolean;
  dimmed: boolean;
  selected: boolean;
  heat: number[] | null; // 0..1 per generated token, hotter = less likely
}

export interface TreeView {
  seq: number;
  hoist: string;
  nodes: NodeView[];
}

const LABEL_LIMIT = 40;

export function buildTreeView(
  doc: DocumentPayload,
  seq: number,
  hoist: string,
  collapsed: Set<string>,
  selected: string | null,
  withHeat = false,
): TreeView {
  const nodes = layoutTree(doc, hoist, collapsed).map((layout) => {
    const payload = doc.nodes[layout.id]!;
    const canonical = payload.flags.includes("canonical");
    return {
      ...layout,
      label: ellipsize(payload.text, LABEL_LIMIT),
      canonical,
      dimmed: payload.flags.includes("exploratory") && !canonical,
      selected: layout.id === selected,
      heat: withHeat ? tokenHeat(doc, layout.id) : null,
    };
  });
  return { seq, hoist, nodes };
}

export function ellipsize(text: string, limit: number): string {
  const flat = text.replace(/\s+/g, " ").trim();
  if (flat.length <= limit) return flat;
  return flat.slice(0, limit - 1) + "…";
}

/** Per-token improbability in [0, 1]; null for human-written nodes. */
export function tokenHeat(doc: DocumentPayload, node: string): number[] | null {
  const meta = doc.nodes[node]?.gen_meta;
  if (!meta || meta.logprobs.length === 0) return null;
  return meta.logprobs.map((lp) => 1 - Math.exp(Math.max(lp, -20)));
}

/** The golden thread: ids on the canonical path that are currently visible. */
export function canonicalThread(view: TreeView): string[] {
  return view.nodes.filter((n) => n.canonical).map((n) => n.id);
}
