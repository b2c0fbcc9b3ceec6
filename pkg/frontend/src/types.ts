// Shapes of the task-manager HTTP API this dashboard consumes.

export interface StreamEvent {
  seq: number;
  timestamp: number;
  direction: "sent" | "received" | "internal";
  messageType: string;
  sessionId: string;
  bodySummary: string;
}

export interface ParticipantView {
  serviceId: string | null;
  sessionId: string | null;
  state: string | null;
  status: string;
}

export interface PlanNodeDoc {
  nodeId: string;
  serviceTypeName: string;
  precondition: string;
  effect: string;
  binding: Record<string, string>;
}

export interface PlanEdgeDoc {
  producer: string;
  consumer: string;
  atom: string;
}

export interface PlanDoc {
  nodes: PlanNodeDoc[];
  edges: PlanEdgeDoc[];
  estimatedCost: number;
  estimatedTime: number;
}

export interface TransactionDoc {
  transactionId: string;
  status: string;
  reason: string;
  task: { precondition: string | null; effect: string };
  plan: PlanDoc | null;
  participants: Record<string, ParticipantView>;
}

export const TERMINAL_STATUSES = ["Completed", "Aborted", "Cancelled"] as const;

export function isTerminalStatus(status: string): boolean {
  return (TERMINAL_STATUSES as readonly string[]).includes(status);
}
