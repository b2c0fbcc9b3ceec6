import http from "node:http";
import { AddressInfo } from "node:net";
import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { EventStream, isTerminalEvent, parseFrame } from "../src/sse.js";
import type { StreamEvent } from "../src/types.js";

function makeEvent(seq: number, messageType = "Arrange", bodySummary = ""): StreamEvent {
  return { seq, timestamp: seq, direction: "sent", messageType, sessionId: "s1", bodySummary };
}

/** Minimal SSE server: replays `events` after fromSeq; optionally cuts the
 * connection after `dropAfter` frames to simulate an unreliable link. */
function sseServer(events: StreamEvent[], options: { dropAfter?: number; delayMs?: number } = {}) {
  let connections = 0;
  const server = http.createServer(async (req, res) => {
    connections += 1;
    const url = new URL(req.url!, "http://localhost");
    const fromSeq = Number(url.searchParams.get("fromSeq") ?? "0");
    res.writeHead(200, { "content-type": "text/event-stream" });
    res.write(": ping\n\n");
    let sent = 0;
    for (const event of events) {
      if (event.seq <= fromSeq) {
        continue;
      }
      if (options.dropAfter !== undefined && sent >= options.dropAfter && connections === 1) {
        res.destroy();
        return;
      }
      if (options.delayMs) {
        await new Promise((resolve) => setTimeout(resolve, options.delayMs));
        if (res.destroyed) {
          return;
        }
      }
      res.write(`id: ${event.seq}\ndata: ${JSON.stringify(event)}\n\n`);
      sent += 1;
      if (isTerminalEvent(event)) {
        res.end();
        return;
      }
    }
    // keep open: live stream with nothing more to say
  });
  return new Promise<{ url: string; close: () => void; connectionCount: () => number }>((resolve) => {
    server.listen(0, "127.0.0.1", () => {
      const { port } = server.address() as AddressInfo;
      resolve({
        url: `http://127.0.0.1:${port}`,
        close: () => server.close(),
        connectionCount: () => connections,
      });
    });
  });
}

function collectUntilClosed(url: string, fromSeq = 0) {
  const got: StreamEvent[] = [];
  return new Promise<StreamEvent[]>((resolve) => {
    new EventStream(url, "t1", {
      onEvent: (e) => got.push(e),
      onClose: () => resolve(got),
    }, fromSeq).start();
  });
}

describe("parseFrame", () => {
  it("parses data frames and ignores comments", () => {
    const event = makeEvent(3);
    expect(parseFrame(`id: 3\ndata: ${JSON.stringify(event)}`)).toEqual(event);
    expect(parseFrame(": ping")).toBeNull();
  });
});

describe("EventStream", () => {
  const terminal = makeEvent(5, "StatusChanged", "Completed");
  const events = [makeEvent(1), makeEvent(2, "Terms"), makeEvent(3, "Accept"), makeEvent(4, "Execute"), terminal];
  let server: Awaited<ReturnType<typeof sseServer>>;

  afterEach(() => server?.close());

  it("delivers every event once and closes after the terminal event", async () => {
    server = await sseServer(events);
    const got = await collectUntilClosed(server.url);
    expect(got.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5]);
  });

  it("resumes from fromSeq without duplicates", async () => {
    server = await sseServer(events);
    const got = await collectUntilClosed(server.url, 3);
    expect(got.map((e) => e.seq)).toEqual([4, 5]);
  });

  it("reconnects after a dropped connection with no gaps or duplicates", async () => {
    server = await sseServer(events, { dropAfter: 2 });
    const got = await collectUntilClosed(server.url);
    expect(got.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5]);
    expect(server.connectionCount()).toBeGreaterThanOrEqual(2);
  });

  it("dropConnection forces a resume mid-stream", async () => {
    server = await sseServer(events, { delayMs: 25 });
    const got: StreamEvent[] = [];
    await new Promise<void>((resolve) => {
      const stream = new EventStream(server.url, "t1", {
        onEvent: (e) => {
          got.push(e);
          if (e.seq === 2) {
            stream.dropConnection();
          }
        },
        onClose: () => resolve(),
      }).start();
    });
    expect(got.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5]);
    expect(server.connectionCount()).toBe(2);
  });
});
