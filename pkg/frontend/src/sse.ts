// Incremental parser for the server-sent-events mutation stream, with
// exactly-once delivery by sequence number.

import type { StreamEvent } from "./types.js";

export class SseParser {
  private buffer = "";
  private lastSeq: number;

  constructor(since = 0) {
    this.lastSeq = since;
  }

  /** Feed a chunk of stream text; returns newly completed, deduplicated events. */
  feed(chunk: string): StreamEvent[] {
    this.buffer += chunk;
    const out: StreamEvent[] = [];
    let cut: number;
    while ((cut = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const event = parseBlock(block);
      if (event && event.seq > this.lastSeq) {
        this.lastSeq = event.seq;
        out.push(event);
      }
    }
    return out;
  }

  get seenThrough(): number {
    return this.lastSeq;
  }
}

function parseBlock(block: string): StreamEvent | null {
  let data: string | null = null;
  for (const line of block.split("\n")) {
    if (line.startsWith("data: ")) data = line.slice("data: ".length);
    // comment lines (keep-alives) start with ":", id/event lines are
    // redundant with the JSON payload
  }
  if (data === null) return null;
  try {
    const parsed = JSON.parse(data) as StreamEvent;
    if (typeof parsed.seq !== "number" || typeof parsed.kind !== "string") return null;
    return parsed;
  } catch {
    return null;
  }
}

export function parseEventText(text: string, since = 0): StreamEvent[] {
  return new SseParser(since).feed(text);
}
