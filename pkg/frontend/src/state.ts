// Client-side session state and the interaction flows around it.
//
// Two hard rules, enforced here rather than in the DOM layer:
//  - story text is never assembled client-side: the read view shows exactly
//    what GET .../read returned;
//  - every mutation carries the last-seen sequence number, and a conflict
//    always surfaces a dialog - there is no silent overwrite path.

import { ApiClient, ApiError } from "./api.js";
import type { DocumentPayload, ExpandPolicy, Snapshot, StreamEvent } from "./types.js";

export type ViewKind = "visualize" | "read";

export interface ConflictDialog {
  kind: "conflict";
  node: string;
  attemptedText: string;
  currentSeq: number;
  message: string;
}

export interface ViewState {
  hoist: string;
  collapsed: Set<string>;
  selected: string | null;
  view: ViewKind;
  pendingJobs: Set<string>;
  readText: string | null; // exactly the server's read endpoint output
  readNode: string | null;
  dialog: ConflictDialog | null;
  needsRefetch: boolean;
}

export class SessionController {
  doc!: DocumentPayload;
  seq = 0;
  state: ViewState;

  constructor(
    private api: ApiClient,
    public docId: string,
  ) {
    this.state = {
      hoist: "",
      collapsed: new Set(),
      selected: null,
      view: "visualize",
      pendingJobs: new Set(),
      readText: null,
      readNode: null,
      dialog: null,
      needsRefetch: false,
    };
  }

  applySnapshot(snapshot: Snapshot): void {
    this.doc = snapshot.document;
    this.seq = snapshot.seq;
    if (!this.state.hoist || !this.doc.nodes[this.state.hoist]) {
      this.state.hoist = this.doc.root;
    }
    if (this.state.selected && !this.doc.nodes[this.state.selected]) {
      this.state.selected = null;
    }
    this.state.needsRefetch = false;
  }

  async refresh(): Promise<void> {
    this.applySnapshot(await this.api.getDoc(this.docId));
  }

  // -- navigation ------------------------------------------------------------

  /** Select a node, widening hoist and collapse state so it stays visible. */
  select(node: string): void {
    if (!this.doc.nodes[node]) throw new Error(`unknown node ${node}`);
    if (!this.visible().nodes.has(node)) {
      if (!this.activePathFrom(this.state.hoist, node)) {
        this.state.hoist = this.doc.root;
      }
      let cursor = this.doc.nodes[node]!.active_parent;
      while (cursor !== null) {
        this.state.collapsed.delete(cursor);
        cursor = this.doc.nodes[cursor]?.active_parent ?? null;
      }
    }
    this.state.selected = node;
  }

  private activePathFrom(ancestor: string, node: string): boolean {
    let cursor: string | null = node;
    const limit = Object.keys(this.doc.nodes).length + 1;
    for (let i = 0; cursor !== null && i <= limit; i++) {
      if (cursor === ancestor) return true;
      cursor = this.doc.nodes[cursor]?.active_parent ?? null;
    }
    return false;
  }

  hoist(node: string): void {
    if (!this.doc.nodes[node]) throw new Error(`unknown node ${node}`);
    this.state.hoist = node;
  }

  unhoist(): void {
    this.state.hoist = this.doc.root;
  }

  toggleCollapse(node: string): void {
    if (this.state.collapsed.has(node)) this.state.collapsed.delete(node);
    else this.state.collapsed.add(node);
  }

  jumpToBookmark(name: string): void {
    const target = this.doc.bookmarks[name];
    if (!target) throw new Error(`unknown bookmark ${name}`);
    this.select(target);
  }

  jumpToChapter(chapterId: string): void {
    const chapter = this.doc.chapters.find((c) => c.id === chapterId);
    if (!chapter) throw new Error(`unknown chapter ${chapterId}`);
    this.select(chapter.root_node);
  }

  // -- read view ----------------------------------------------------------------

  async openReadView(node: string): Promise<string> {
    const text = await this.api.read(this.docId, node);
    this.state.view = "read";
    this.state.readNode = node;
    this.state.readText = text; // byte-for-byte what the server said
    return text;
  }

  showVisualize(): void {
    this.state.view = "visualize";
  }

  // -- mutations with optimistic concurrency ----------------------------------------

  async editText(node: string, text: string): Promise<boolean> {
    try {
      const res = await this.api.patchNode(this.docId, node, {
        text,
        if_seq: this.seq,
      });
      this.doc.nodes[node]!.text = text;
      this.seq = res.seq;
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.state.dialog = {
          kind: "conflict",
          node,
          attemptedText: text,
          currentSeq: (err.body.details["current_seq"] as number) ?? -1,
          message: err.body.message,
        };
        return false; // nothing applied; the dialog owns the next step
      }
      throw err;
    }
  }

  /** Conflict dialog: refetch the latest document, then retry the edit. */
  async resolveConflictRetry(): Promise<boolean> {
    const dialog = this.state.dialog;
    if (!dialog) return false;
    this.state.dialog = null;
    await this.refresh();
    return this.editText(dialog.node, dialog.attemptedText);
  }

  dismissConflict(): void {
    this.state.dialog = null;
  }

  // -- generation ---------------------------------------------------------------------

  async startExpand(node: string, policy: ExpandPolicy): Promise<string> {
    const { job } = await this.api.expand(this.docId, node, policy);
    this.state.pendingJobs.add(job);
    return job;
  }

  async startSiblings(node: string, n: number): Promise<string> {
    const { job } = await this.api.generate(this.docId, node, n);
    this.state.pendingJobs.add(job);
    return job;
  }

  async cancelJob(job: string): Promise<void> {
    await this.api.cancelJob(this.docId, job);
  }

  // -- event stream ----------------------------------------------------------------------

  /** Apply one mutation event; stale or duplicate events are ignored and a
   * gap marks the snapshot for refetch. */
  applyEvent(event: StreamEvent): void {
    if (event.seq <= this.seq) return;
    if (event.seq !== this.seq + 1) {
      this.state.needsRefetch = true;
      return;
    }
    this.seq = event.seq;
    const data = event.data;
    switch (event.kind) {
      case "node-created": {
        const node = data["node"] as string;
        const parent = data["parent"] as string;
        if (this.doc.nodes[parent] && !this.doc.nodes[node]) {
          this.doc.nodes[node] = {
            text: "",
            parents: [parent],
            active_parent: parent,
            children_order: [],
            flags: ["exploratory"],
            gen_meta: null,
          };
          this.doc.nodes[parent]!.children_order.push(node);
          this.state.needsRefetch = true; // text arrives with the next snapshot
        } else if (!this.doc.nodes[parent]) {
          this.state.needsRefetch = true;
        }
        break;
      }
      case "node-updated": {
        const node = data["node"] as string;
        const payload = this.doc.nodes[node];
        if (payload) {
          if (typeof data["text"] === "string") payload.text = data["text"];
          if (Array.isArray(data["flags"])) payload.flags = data["flags"] as string[];
        }
        break;
      }
      case "job-done":
      case "job-error": {
        const job = data["job"] as string;
        this.state.pendingJobs.delete(job);
        this.state.needsRefetch = true; // pull authoritative texts and topology
        break;
      }
      default:
        // splits, merges, reparents, deletes: topology moved under us
        this.state.needsRefetch = true;
    }
  }

  /** Nodes currently presented by the visualize view (sequence-tagged). */
  visible(): { seq: number; nodes: Set<string> } {
    const nodes = new Set<string>();
    const stack = [this.state.hoist];
    while (stack.length) {
      const id = stack.pop()!;
      if (nodes.has(id) || !this.doc.nodes[id]) continue;
      nodes.add(id);
      if (!this.state.collapsed.has(id)) {
        for (const child of this.doc.nodes[id]!.children_order) {
          if (this.doc.nodes[child]?.active_parent === id) stack.push(child);
        }
      }
    }
    return { seq: this.seq, nodes };
  }
}
