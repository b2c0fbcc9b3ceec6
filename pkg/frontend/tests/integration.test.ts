// End-to-end against the real backend: the dashboard's client modules drive
// the same HTTP surface the browser UI uses.

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { TaskmanClient, ApiError } from "../src/api.js";
import { checkDraft } from "../src/grammar.js";
import { EventStream } from "../src/sse.js";
import {
  applyServerEvent,
  feedIsGapless,
  initialState,
  messageFeed,
  registerTransaction,
} from "../src/store.js";
import type { DashboardState } from "../src/store.js";
import type { StreamEvent } from "../src/types.js";
import { isTerminalStatus } from "../src/types.js";
import { startBackend, Backend } from "./backend.js";

let backend: Backend;
let client: TaskmanClient;

beforeAll(async () => {
  backend = await startBackend({ realtime: 0.05 });
  client = new TaskmanClient(backend.baseUrl);
}, 60_000);

afterAll(async () => {
  await backend?.stop();
});

function submitThroughForm(effect: string, precondition: string): Promise<string> {
  // The form's submit path: grammar validation gates the request.
  const check = checkDraft(effect, precondition);
  if (!check.ok) {
    throw new Error(`draft invalid: ${check.message}`);
  }
  return client.submitTask(effect, precondition || null);
}

function streamToCompletion(
  transactionId: string,
  options: { dropAtSeq?: number } = {},
): Promise<{ state: DashboardState; connections: number }> {
  let state = registerTransaction(initialState(), transactionId);
  let drops = 0;
  return new Promise((resolve) => {
    const stream = new EventStream(backend.baseUrl, transactionId, {
      onEvent: (event: StreamEvent) => {
        state = applyServerEvent(state, transactionId, event);
        if (options.dropAtSeq !== undefined && event.seq === options.dropAtSeq && drops === 0) {
          drops += 1;
          stream.dropConnection();
        }
      },
      onClose: () => resolve({ state, connections: drops + 1 }),
    }).start();
  });
}

describe("dashboard against the live backend", () => {
  it(
    "submitting the jar-transport task shows the exact ten-message sequence",
    async () => {
      const txnId = await submitThroughForm("Jar002 isOn Platform001", "Jar002 isOn ?Shelf");
      expect(txnId).toMatch(/^t\d+$/);
      const { state } = await streamToCompletion(txnId);
      const card = state.transactions[txnId]!;
      expect(card.status).toBe("Completed");
      const feed = messageFeed(card).map((e) => [e.direction, e.messageType]);
      expect(feed).toEqual([
        ["sent", "Arrange"],
        ["sent", "Arrange"],
        ["received", "Terms"],
        ["received", "Terms"],
        ["sent", "Accept"],
        ["sent", "Cancel"],
        ["sent", "Execute"],
        ["received", "Completed"],
        ["sent", "End"],
        ["sent", "End"],
      ]);
      expect(feedIsGapless(card)).toBe(true);
    },
    60_000,
  );

  it(
    "cancel during a slow execution is confirmed by the server, not assumed",
    async () => {
      // Second task: carry the jar back. Execution is paced, so there is
      // time to press Cancel mid-carry.
      const txnId = await submitThroughForm("Jar002 isOn Shelf03", "");
      let state = registerTransaction(initialState(), txnId);
      let cancelled = false;
      await new Promise<void>((resolve) => {
        new EventStream(backend.baseUrl, txnId, {
          onEvent: (event) => {
            state = applyServerEvent(state, txnId, event);
            const card = state.transactions[txnId]!;
            if (card.status === "Executing" && !cancelled) {
              cancelled = true;
              void client.cancelTransaction(txnId);
              // Status must stay Executing until the server says otherwise.
              expect(card.status).toBe("Executing");
            }
          },
          onClose: () => resolve(),
        }).start();
      });
      const card = state.transactions[txnId]!;
      expect(cancelled).toBe(true);
      expect(card.status).toBe("Cancelled");
      const types = card.events.map((e) => e.messageType);
      expect(types).toContain("Stop");
      const view = await client.getTransaction(txnId);
      expect(view.status).toBe("Cancelled");
      // A second cancel is already terminal and surfaces as 409.
      await expect(client.cancelTransaction(txnId)).rejects.toSatisfy(
        (err: unknown) => err instanceof ApiError && err.status === 409,
      );
    },
    60_000,
  );

  it(
    "a reconnect mid-stream leaves no duplicate or missing seq numbers",
    async () => {
      // The earlier tests left the jar off the shelf, so this plans and runs
      // a real transfer with a full message feed to break mid-stream.
      const txnId = await submitThroughForm("Jar002 isOn Shelf03", "");
      const { state, connections } = await streamToCompletion(txnId, { dropAtSeq: 4 });
      const card = state.transactions[txnId]!;
      expect(connections).toBe(2);
      expect(isTerminalStatus(card.status)).toBe(true);
      const seqs = card.events.map((e) => e.seq);
      expect(seqs).toEqual(Array.from({ length: seqs.length }, (_, i) => i + 1));
    },
    60_000,
  );

  it("malformed drafts never reach the server", async () => {
    const check = checkDraft("Jar002 isOn", "");
    expect(check.ok).toBe(false);
    // And if something slipped through anyway, the server rejects it inline.
    const response = await fetch(`${backend.baseUrl}/tasks`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ effect: "Jar002 isOn" }),
    });
    expect(response.status).toBe(400);
    const body = await response.json();
    expect(body.detail.position).toBe("Jar002 isOn".length);
  });
});
