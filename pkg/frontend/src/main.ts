// Browser bootstrap: wires the controller to a minimal DOM shell.
// Configuration is a single base URL (plus optional token), via the query
// string: index.html?base=http://127.0.0.1:8376&doc=<id>

import { ApiClient } from "./api.js";
import { canonicalThread, buildTreeView, type TreeView } from "./render.js";
import { SessionController } from "./state.js";

const COLUMN_W = 190;
const ROW_H = 46;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const base = params.get("base") ?? "";
  const api = new ApiClient(base, (url, init) => fetch(url, init));

  let docId = params.get("doc");
  if (!docId) {
    const opened = await api.openDoc({
      prompt: "Write the opening line of a story:\n",
      provider: { kind: "table", rules: "m1" },
    });
    docId = opened.id;
  }
  const controller = new SessionController(api, docId);
  await controller.refresh();

  const root = document.getElementById("app")!;
  const toolbar = el("div", { class: "toolbar" });
  const canvas = el("div", { class: "canvas" });
  const readPane = el("pre", { class: "read hidden" });
  const dialogPane = el("div", { class: "dialog hidden" });
  const status = el("span", { class: "status" });
  root.append(toolbar, canvas, readPane, dialogPane);

  const tauSlider = el("input", {
    type: "range", min: "0.05", max: "1", step: "0.05", value: "0.9",
  });
  const tauLabel = el("span", {}, "tau 0.90");
  tauSlider.oninput = () => {
    tauLabel.textContent = `tau ${Number(tauSlider.value).toFixed(2)}`;
  };

  const button = (label: string, onClick: () => void) => {
    const b = el("button", {}, label);
    b.onclick = onClick;
    return b;
  };

  toolbar.append(
    button("expand", () => {
      const node = controller.state.selected ?? controller.doc.root;
      void controller
        .startExpand(node, {
          tau: Number(tauSlider.value),
          branch_cap: 3,
          segment_token_budget: 8,
          total_node_budget: 24,
        })
        .then(() => render());
    }),
    button("siblings x3", () => {
      const node = controller.state.selected ?? controller.doc.root;
      void controller.startSiblings(node, 3).then(() => render());
    }),
    tauSlider,
    tauLabel,
    button("read view", () => {
      const node = controller.state.selected ?? controller.doc.root;
      void controller.openReadView(node).then(() => render());
    }),
    button("visualize", () => {
      controller.showVisualize();
      render();
    }),
    button("unhoist", () => {
      controller.unhoist();
      render();
    }),
  );

  const searchBox = el("input", { type: "search", placeholder: "search…" });
  searchBox.onkeydown = (e) => {
    if (e.key !== "Enter" || !searchBox.value) return;
    void api.search(docId!, searchBox.value).then(({ matches }) => {
      status.textContent = ` ${matches.length} match(es)`;
      if (matches[0]) {
        controller.select(matches[0].node);
        render();
      }
    });
  };
  toolbar.append(
    searchBox,
    button("go to bookmark", () => {
      const names = Object.keys(controller.doc.bookmarks);
      const name = prompt(`bookmark (${names.join(", ") || "none"})`);
      if (name && controller.doc.bookmarks[name]) {
        controller.jumpToBookmark(name);
        render();
      }
    }),
    button("go to chapter", () => {
      const titles = controller.doc.chapters.map((c) => c.title);
      const title = prompt(`chapter (${titles.join(", ") || "none"})`);
      const chapter = controller.doc.chapters.find((c) => c.title === title);
      if (chapter) {
        controller.jumpToChapter(chapter.id);
        render();
      }
    }),
    status,
  );

  const renderDialog = () => {
    dialogPane.innerHTML = "";
    const dialog = controller.state.dialog;
    if (!dialog) {
      dialogPane.classList.add("hidden");
      return;
    }
    dialogPane.classList.remove("hidden");
    dialogPane.append(
      el("p", {}, `Edit conflict: the document moved on (seq ${dialog.currentSeq}).`),
      button("reload and retry", () => {
        void controller.resolveConflictRetry().then(() => render());
      }),
      button("discard my edit", () => {
        controller.dismissConflict();
        render();
      }),
    );
  };

  const renderTree = (view: TreeView) => {
    canvas.innerHTML = "";
    const golden = new Set(canonicalThread(view));
    for (const node of view.nodes) {
      const box = el("div", {
        class:
          "node" +
          (node.selected ? " selected" : "") +
          (golden.has(node.id) ? " canonical" : "") +
          (node.dimmed ? " dimmed" : ""),
        style: `left:${node.x * COLUMN_W}px; top:${node.y * ROW_H}px`,
        title: node.id,
      });
      box.append(el("span", { class: "label" }, node.label || "(root)"));
      if (node.collapsedBadge > 0) {
        box.append(el("span", { class: "badge" }, `+${node.collapsedBadge}`));
      }
      box.onclick = () => {
        controller.select(node.id);
        render();
      };
      box.ondblclick = () => {
        const current = controller.doc.nodes[node.id]!.text;
        const next = prompt("Edit node text", current);
        if (next !== null && next !== current) {
          void controller.editText(node.id, next).then(() => render());
        }
      };
      box.oncontextmenu = (e) => {
        e.preventDefault();
        if (e.shiftKey) controller.hoist(node.id);
        else controller.toggleCollapse(node.id);
        render();
      };
      canvas.append(box);
    }
  };

  const render = () => {
    status.textContent = ` seq ${controller.seq}` +
      (controller.state.pendingJobs.size ? ` · ${controller.state.pendingJobs.size} job(s)` : "");
    renderDialog();
    if (controller.state.view === "read") {
      readPane.classList.remove("hidden");
      canvas.classList.add("hidden");
      readPane.textContent = controller.state.readText ?? "";
      return;
    }
    readPane.classList.add("hidden");
    canvas.classList.remove("hidden");
    renderTree(
      buildTreeView(
        controller.doc,
        controller.seq,
        controller.state.hoist,
        controller.state.collapsed,
        controller.state.selected,
      ),
    );
  };

  const stream = new EventSource(`${base}/api/doc/${docId}/events?since=${controller.seq}`);
  stream.onmessage = (message: MessageEvent<string>) => {
    controller.applyEvent(JSON.parse(message.data));
    if (controller.state.needsRefetch) {
      void controller.refresh().then(render);
    } else {
      render();
    }
  };
  stream.onerror = () => {
    // connectivity lost: go read-only, discard queued intent
    controller.dismissConflict();
    status.textContent = " connection lost — read-only";
    for (const b of toolbar.querySelectorAll("button")) b.disabled = true;
  };

  render();
}

void boot();
