// Live transaction feed over the server's SSE endpoint.
//
// Built on fetch + ReadableStream so the same code runs in browsers and in
// Node tests.  On a dropped connection it reconnects with ?fromSeq=<last
// seen>, and events are deduplicated by seq, so the consumer sees a gapless,
// duplicate-free sequence no matter how often the stream breaks.

import type { StreamEvent } from "./types.js";

export function isTerminalEvent(event: StreamEvent): boolean {
  return (
    event.messageType === "StatusChanged" &&
    /^(Completed|Aborted|Cancelled)/.test(event.bodySummary)
  );
}

export interface EventStreamHandlers {
  onEvent: (event: StreamEvent) => void;
  onConnectionChange?: (connected: boolean) => void;
  onClose?: () => void;
}

const BASE_DELAY_MS = 250;
const MAX_DELAY_MS = 10_000;

export class EventStream {
  private lastSeq: number;
  private controller: AbortController | null = null;
  private closed = false;
  private attempt = 0;

  constructor(
    private readonly baseUrl: string,
    private readonly transactionId: string,
    private readonly handlers: EventStreamHandlers,
    fromSeq = 0,
  ) {
    this.lastSeq = fromSeq;
  }

  start(): this {
    void this.loop();
    return this;
  }

  /** Tear down the current connection only; the read loop reconnects. */
  dropConnection(): void {
    this.controller?.abort();
  }

  close(): void {
    this.closed = true;
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.closed) {
      this.controller = new AbortController();
      try {
        const response = await fetch(
          `${this.baseUrl}/transactions/${this.transactionId}/events?fromSeq=${this.lastSeq}`,
          { signal: this.controller.signal, headers: { accept: "text/event-stream" } },
        );
        if (!response.ok || !response.body) {
          throw new Error(`stream request failed: ${response.status}`);
        }
        this.attempt = 0;
        this.handlers.onConnectionChange?.(true);
        const finished = await this.consume(response.body);
        if (finished) {
          this.closed = true;
          break;
        }
      } catch {
        // fall through to retry
      }
      this.handlers.onConnectionChange?.(false);
      if (this.closed) {
        break;
      }
      const delay = Math.min(BASE_DELAY_MS * 2 ** this.attempt, MAX_DELAY_MS);
      this.attempt += 1;
      await new Promise((resolve) => setTimeout(resolve, delay));
    }
    this.handlers.onClose?.();
  }

  /** Returns true when the terminal status event arrived. */
  private async consume(body: ReadableStream<Uint8Array>): Promise<boolean> {
    const reader = body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) {
          return false; // server went away before the terminal event
        }
        buffer += decoder.decode(value, { stream: true });
        let boundary;
        while ((boundary = buffer.search(/\r?\n\r?\n/)) >= 0) {
          const frame = buffer.slice(0, boundary);
          buffer = buffer.slice(boundary).replace(/^\r?\n\r?\n/, "");
          const event = parseFrame(frame);
          if (event === null) {
            continue; // comment / keepalive
          }
          if (event.seq <= this.lastSeq) {
            continue; // duplicate after a resume
          }
          this.lastSeq = event.seq;
          this.handlers.onEvent(event);
          if (isTerminalEvent(event)) {
            return true;
          }
        }
      }
    } finally {
      reader.releaseLock();
    }
  }
}

export function parseFrame(frame: string): StreamEvent | null {
  let data = "";
  for (const line of frame.split(/\r?\n/)) {
    if (line.startsWith("data:")) {
      data += line.slice(5).trimStart();
    }
  }
  if (!data) {
    return null;
  }
  return JSON.parse(data) as StreamEvent;
}
