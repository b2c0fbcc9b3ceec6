// Dashboard state is a pure function of the server events received (plus
// the local draft): reloading and replaying the same events reconstructs the
// same view.  No status is ever set optimistically; every displayed status
// comes from a StatusChanged event the server sent.

import type { StreamEvent } from "./types.js";
import { isTerminalStatus } from "./types.js";

export interface TransactionCard {
  transactionId: string;
  status: string;
  reason: string;
  events: StreamEvent[];
  lastSeq: number;
  connected: boolean;
  cancelRequested: boolean;
}

export interface DashboardState {
  order: string[];
  transactions: Record<string, TransactionCard>;
}

export function initialState(): DashboardState {
  return { order: [], transactions: {} };
}

function emptyCard(transactionId: string): TransactionCard {
  return {
    transactionId,
    status: "Planning",
    reason: "",
    events: [],
    lastSeq: 0,
    connected: false,
    cancelRequested: false,
  };
}

export function registerTransaction(state: DashboardState, transactionId: string): DashboardState {
  if (state.transactions[transactionId]) {
    return state;
  }
  return {
    order: [...state.order, transactionId],
    transactions: { ...state.transactions, [transactionId]: emptyCard(transactionId) },
  };
}

function statusFromEvent(event: StreamEvent): { status: string; reason: string } | null {
  if (event.messageType !== "StatusChanged") {
    return null;
  }
  const idx = event.bodySummary.indexOf(":");
  if (idx < 0) {
    return { status: event.bodySummary.trim(), reason: "" };
  }
  return {
    status: event.bodySummary.slice(0, idx).trim(),
    reason: event.bodySummary.slice(idx + 1).trim(),
  };
}

export function applyServerEvent(
  state: DashboardState,
  transactionId: string,
  event: StreamEvent,
): DashboardState {
  const base = registerTransaction(state, transactionId);
  const card = base.transactions[transactionId]!;
  if (event.seq <= card.lastSeq || card.events.some((e) => e.seq === event.seq)) {
    return base; // duplicates are dropped; ordering comes from seq
  }
  const events = [...card.events, event].sort((a, b) => a.seq - b.seq);
  const statusChange = statusFromEvent(event);
  const next: TransactionCard = {
    ...card,
    events,
    lastSeq: events[events.length - 1]!.seq,
    status: statusChange ? statusChange.status : card.status,
    reason: statusChange ? statusChange.reason : card.reason,
  };
  return { order: base.order, transactions: { ...base.transactions, [transactionId]: next } };
}

export function setConnection(
  state: DashboardState,
  transactionId: string,
  connected: boolean,
): DashboardState {
  const card = state.transactions[transactionId];
  if (!card || card.connected === connected) {
    return state;
  }
  return {
    order: state.order,
    transactions: { ...state.transactions, [transactionId]: { ...card, connected } },
  };
}

export function markCancelRequested(state: DashboardState, transactionId: string): DashboardState {
  const card = state.transactions[transactionId];
  if (!card) {
    return state;
  }
  return {
    order: state.order,
    transactions: {
      ...state.transactions,
      [transactionId]: { ...card, cancelRequested: true },
    },
  };
}

export function canCancel(card: TransactionCard): boolean {
  return !isTerminalStatus(card.status) && !card.cancelRequested;
}

export function messageFeed(card: TransactionCard): StreamEvent[] {
  return card.events.filter((e) => e.direction === "sent" || e.direction === "received");
}

export function feedIsGapless(card: TransactionCard): boolean {
  const seqs = card.events.map((e) => e.seq);
  return seqs.every((seq, i) => seq === (seqs[0] ?? 1) + i);
}
