// Layered left-to-right layout over active-parent edges. Extra parents and
// cycle-closing edges are emitted as overlay links so the renderer can draw
// them distinctly. Deterministic for a given document, hoist, and collapse
// set; no two nodes share a position.

import type { DocumentPayload } from "./types.js";

export interface LayoutEdge {
  from: string;
  to: string;
  kind: "tree" | "extra" | "cycle";
}

export interface LayoutNode {
  id: string;
  x: number; // column: active depth below the hoist root
  y: number; // row: tidy position among siblings
  collapsedBadge: number; // hidden active descendants, 0 when expanded
  edges: LayoutEdge[]; // outgoing edges drawn from this node
}

function activeChildren(doc: DocumentPayload, id: string): string[] {
  const node = doc.nodes[id];
  if (!node) return [];
  return node.children_order.filter((c) => doc.nodes[c]?.active_parent === id);
}

function activeSubtreeSize(doc: DocumentPayload, id: string): number {
  let count = 0;
  const stack = [id];
  const seen = new Set<string>();
  while (stack.length) {
    const current = stack.pop()!;
    if (seen.has(current)) continue;
    seen.add(current);
    count += 1;
    stack.push(...activeChildren(doc, current));
  }
  return count;
}

function isActiveAncestor(doc: DocumentPayload, maybeAncestor: string, of: string): boolean {
  let cursor: string | null = of;
  let steps = 0;
  const limit = Object.keys(doc.nodes).length + 1;
  while (cursor !== null && steps <= limit) {
    if (cursor === maybeAncestor) return true;
    cursor = doc.nodes[cursor]?.active_parent ?? null;
    steps += 1;
  }
  return false;
}

export function layoutTree(
  doc: DocumentPayload,
  hoist: string,
  collapsed: Set<string>,
): LayoutNode[] {
  if (!doc.nodes[hoist]) throw new Error(`hoist root ${hoist} not in snapshot`);

  const out = new Map<string, LayoutNode>();
  let nextRow = 0;

  const place = (id: string, depth: number): number => {
    const isCollapsed = collapsed.has(id);
    const children = isCollapsed ? [] : activeChildren(doc, id);
    let y: number;
    if (children.length === 0) {
      y = nextRow++;
    } else {
      const rows = children.map((c) => place(c, depth + 1));
      y = rows.reduce((a, b) => a + b, 0) / rows.length;
    }
    out.set(id, {
      id,
      x: depth,
      y,
      collapsedBadge: isCollapsed ? activeSubtreeSize(doc, id) - 1 : 0,
      edges: [],
    });
    return y;
  };
  place(hoist, 0);

  for (const node of out.values()) {
    if (!collapsed.has(node.id)) {
      for (const child of activeChildren(doc, node.id)) {
        if (out.has(child)) {
          node.edges.push({ from: node.id, to: child, kind: "tree" });
        }
      }
    }
  }
  // overlay links: non-active parent edges between visible nodes; an edge
  // from a node's own active descendant closes a cycle
  for (const node of out.values()) {
    const payload = doc.nodes[node.id]!;
    for (const parent of payload.parents) {
      if (parent === payload.active_parent || !out.has(parent)) continue;
      const kind = isActiveAncestor(doc, node.id, parent) ? "cycle" : "extra";
      out.get(parent)!.edges.push({ from: parent, to: node.id, kind });
    }
  }

  // stable output order: by column, then row
  return [...out.values()].sort((a, b) => a.x - b.x || a.y - b.y);
}

/** Visible node ids under a hoist and collapse set (layout input contract). */
export function visibleNodes(
  doc: DocumentPayload,
  hoist: string,
  collapsed: Set<string>,
): Set<string> {
  return new Set(layoutTree(doc, hoist, collapsed).map((n) => n.id));
}
