// DOM rendering.  The view is re-rendered from the store on every change;
// handlers are the only way anything reaches the server.

import { checkDraft } from "./grammar.js";
import type { DashboardState, TransactionCard } from "./store.js";
import { canCancel, messageFeed } from "./store.js";

export interface ViewHandlers {
  onSubmit: (effect: string, precondition: string) => void;
  onCancel: (transactionId: string) => void;
}

export function renderApp(root: HTMLElement, state: DashboardState, handlers: ViewHandlers): void {
  let form = root.querySelector<HTMLFormElement>("#task-form");
  if (!form) {
    root.innerHTML = `
      <h1>taskfleet</h1>
      <form id="task-form">
        <label>Precondition <input name="precondition" placeholder="Jar002 isOn ?Shelf" /></label>
        <label>Effect <input name="effect" placeholder="Jar002 isOn Platform001" /></label>
        <button type="submit" disabled>Submit task</button>
        <span class="error" data-role="draft-error"></span>
      </form>
      <section id="transactions"></section>
    `;
    form = root.querySelector<HTMLFormElement>("#task-form")!;
    wireForm(form, handlers);
  }
  renderTransactions(root.querySelector<HTMLElement>("#transactions")!, state, handlers);
}

function wireForm(form: HTMLFormElement, handlers: ViewHandlers): void {
  const effect = form.querySelector<HTMLInputElement>('input[name="effect"]')!;
  const precondition = form.querySelector<HTMLInputElement>('input[name="precondition"]')!;
  const button = form.querySelector<HTMLButtonElement>("button")!;
  const error = form.querySelector<HTMLElement>('[data-role="draft-error"]')!;

  const validate = () => {
    const check = checkDraft(effect.value, precondition.value);
    button.disabled = !check.ok;
    error.textContent = check.ok ? "" : `${check.field}: ${check.message}`;
  };
  effect.addEventListener("input", validate);
  precondition.addEventListener("input", validate);
  form.addEventListener("submit", (submitEvent) => {
    submitEvent.preventDefault();
    const check = checkDraft(effect.value, precondition.value);
    if (!check.ok) {
      return; // never send a formula the grammar rejects
    }
    handlers.onSubmit(effect.value.trim(), precondition.value.trim());
  });
  validate();
}

function renderTransactions(container: HTMLElement, state: DashboardState, handlers: ViewHandlers): void {
  for (const id of state.order) {
    const card = state.transactions[id]!;
    let element = container.querySelector<HTMLElement>(`[data-txn="${id}"]`);
    if (!element) {
      element = document.createElement("article");
      element.dataset.txn = id;
      element.innerHTML = `
        <header>
          <strong data-role="id"></strong>
          <span data-role="status"></span>
          <span data-role="connection"></span>
          <button data-role="cancel">Cancel</button>
        </header>
        <ol data-role="feed"></ol>
      `;
      element.querySelector<HTMLButtonElement>('[data-role="cancel"]')!.addEventListener("click", (clickEvent) => {
        const button = clickEvent.currentTarget as HTMLButtonElement;
        button.disabled = true; // double clicks send a single request
        handlers.onCancel(id);
      });
      container.prepend(element);
    }
    renderCard(element, card);
  }
}

function renderCard(element: HTMLElement, card: TransactionCard): void {
  element.querySelector('[data-role="id"]')!.textContent = card.transactionId;
  const status = element.querySelector<HTMLElement>('[data-role="status"]')!;
  status.textContent = card.reason ? `${card.status} (${card.reason})` : card.status;
  status.className = `status status-${card.status.toLowerCase()}`;
  element.querySelector<HTMLElement>('[data-role="connection"]')!.textContent =
    card.connected ? "" : "reconnecting…";
  element.querySelector<HTMLButtonElement>('[data-role="cancel"]')!.disabled = !canCancel(card);
  const feed = element.querySelector<HTMLOListElement>('[data-role="feed"]')!;
  const rendered = feed.children.length;
  const entries = messageFeed(card);
  for (const event of entries.slice(rendered)) {
    const li = document.createElement("li");
    li.dataset.seq = String(event.seq);
    li.textContent = `${event.direction === "sent" ? "→" : "←"} ${event.messageType} ${event.sessionId} ${event.bodySummary}`;
    feed.append(li);
  }
}
