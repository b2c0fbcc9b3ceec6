import { TaskmanClient, ApiError } from "./api.js";
import { EventStream } from "./sse.js";
import {
  applyServerEvent,
  initialState,
  markCancelRequested,
  registerTransaction,
  setConnection,
} from "./store.js";
import type { DashboardState } from "./store.js";
import { renderApp } from "./view.js";

const baseUrl = (window as any).TASKFLEET_API ?? "";
const client = new TaskmanClient(baseUrl);
const root = document.getElementById("app")!;
const streams = new Map<string, EventStream>();

let state: DashboardState = initialState();

function update(next: DashboardState): void {
  state = next;
  renderApp(root, state, handlers);
}

function openStream(transactionId: string): void {
  if (streams.has(transactionId)) {
    return;
  }
  const stream = new EventStream(baseUrl, transactionId, {
    onEvent: (event) => update(applyServerEvent(state, transactionId, event)),
    onConnectionChange: (connected) => update(setConnection(state, transactionId, connected)),
    onClose: () => streams.delete(transactionId),
  }).start();
  streams.set(transactionId, stream);
}

const handlers = {
  onSubmit: (effect: string, precondition: string) => {
    client
      .submitTask(effect, precondition || null)
      .then((transactionId) => {
        update(registerTransaction(state, transactionId));
        openStream(transactionId);
      })
      .catch((err) => toast(err instanceof ApiError ? JSON.stringify(err.detail) : String(err)));
  },
  onCancel: (transactionId: string) => {
    // The card flips to Cancelled only once the server's event says so.
    client
      .cancelTransaction(transactionId)
      .then(() => update(markCancelRequested(state, transactionId)))
      .catch((err) => {
        if (err instanceof ApiError && err.status === 409) {
          toast("already terminal");
        } else {
          toast(String(err));
        }
        update(state);
      });
  },
};

function toast(message: string): void {
  const el = document.createElement("div");
  el.className = "toast";
  el.textContent = message;
  document.body.append(el);
  setTimeout(() => el.remove(), 4000);
}

async function bootstrap(): Promise<void> {
  update(state);
  try {
    for (const txn of await client.listTransactions()) {
      update(registerTransaction(state, txn.transactionId));
      openStream(txn.transactionId);
    }
  } catch {
    toast("task manager unreachable");
  }
}

void bootstrap();
