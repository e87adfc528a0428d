// End-to-end flows against the recorded M1 fixture: every response the fake
// server returns was captured from the real service, so these tests pin the
// wire contract as well as the client behavior.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { buildTreeView, canonicalThread } from "../src/render.js";
import { parseEventText } from "../src/sse.js";
import { SessionController } from "../src/state.js";
import type { Fixture } from "./helpers.js";
import { FakeServer } from "./helpers.js";
import rawFixture from "./fixtures/m1_expand.json";

const fixture = rawFixture as unknown as Fixture;

let server: FakeServer;
let api: ApiClient;
let controller: SessionController;

beforeEach(async () => {
  server = new FakeServer(fixture);
  api = new ApiClient("", server.fetch);
  controller = new SessionController(api, server.docId);
  await controller.refresh();
});

describe("adaptive expansion end to end", () => {
  it("tau 0.9 on the M1 document renders exactly three new branches", async () => {
    const root = controller.doc.root;
    const before = buildTreeView(controller.doc, controller.seq, root, new Set(), null);
    expect(before.nodes).toHaveLength(1);

    const job = await controller.startExpand(root, {
      tau: 0.9,
      branch_cap: 3,
      segment_token_budget: 4,
      total_node_budget: 3,
    });
    expect(controller.state.pendingJobs.has(job)).toBe(true);

    for (const event of parseEventText(await api.eventsText(server.docId))) {
      controller.applyEvent(event);
    }
    expect(controller.state.pendingJobs.size).toBe(0);
    if (controller.state.needsRefetch) await controller.refresh();

    const view = buildTreeView(controller.doc, controller.seq, root, new Set(), null);
    const branches = view.nodes.filter((n) => n.x === 1);
    expect(branches).toHaveLength(3);
    const created = new Set(fixture.job_final.report.created);
    expect(new Set(branches.map((n) => n.id))).toEqual(created);
    expect(view.seq).toBe(server.snapshot.seq);
  });

  it("renders only nodes present on the tagged server snapshot", async () => {
    await controller.startExpand(controller.doc.root, { tau: 0.9 });
    for (const event of parseEventText(await api.eventsText(server.docId))) {
      controller.applyEvent(event);
    }
    if (controller.state.needsRefetch) await controller.refresh();
    const { seq, nodes } = controller.visible();
    expect(seq).toBe(server.snapshot.seq);
    for (const id of nodes) {
      expect(server.snapshot.document.nodes[id]).toBeDefined();
    }
  });
});

describe("read view anti-drift", () => {
  it("shows byte-exactly what the server read endpoint returned", async () => {
    await controller.startExpand(controller.doc.root, { tau: 0.9 });
    await controller.refresh();
    for (const [node, expected] of Object.entries(fixture.read)) {
      const text = await controller.openReadView(node);
      expect(text).toBe(expected);
      expect(controller.state.readText).toBe(expected);
      expect(controller.state.view).toBe("read");
      expect(controller.state.readNode).toBe(node);
    }
  });
});

describe("render model", () => {
  it("golden-threads canonical nodes and dims exploratory ones", async () => {
    await controller.startExpand(controller.doc.root, { tau: 0.9 });
    await controller.refresh();
    const root = controller.doc.root;
    const child = fixture.job_final.report.created[0]!;
    controller.doc.nodes[root]!.flags = ["canonical"];
    controller.doc.nodes[child]!.flags = ["canonical"];
    const view = buildTreeView(controller.doc, controller.seq, root, new Set(), null);
    expect(new Set(canonicalThread(view))).toEqual(new Set([root, child]));
    const others = view.nodes.filter((n) => !n.canonical);
    expect(others.length).toBeGreaterThan(0);
    expect(others.every((n) => n.dimmed)).toBe(true);
  });

  it("exposes token heat for generated nodes only", async () => {
    await controller.startExpand(controller.doc.root, { tau: 0.9 });
    await controller.refresh();
    const root = controller.doc.root;
    const view = buildTreeView(controller.doc, controller.seq, root, new Set(), null, true);
    const rootView = view.nodes.find((n) => n.id === root)!;
    expect(rootView.heat).toBeNull(); // human-written prompt
    const generated = view.nodes.filter((n) => n.id !== root);
    for (const node of generated) {
      expect(node.heat).not.toBeNull();
      for (const h of node.heat!) {
        expect(h).toBeGreaterThanOrEqual(0);
        expect(h).toBeLessThanOrEqual(1);
      }
    }
  });
});
