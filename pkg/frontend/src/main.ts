// App wiring: event handling and the session-id-in-URL contract. The UI
// keeps no state across reloads beyond the #session=<id> fragment; a
// reload rebuilds everything from GET /v1/sessions/{id}.

import { ApiClient, ApiError } from "./api.js";
import {
  applyBanner,
  applySession,
  initialState,
  type AppState,
} from "./state.js";
import { renderApp } from "./render.js";

const api = new ApiClient("");
let state: AppState = initialState();

function sessionIdFromUrl(): string | null {
  const match = window.location.hash.match(/session=([a-zA-Z0-9_-]+)/);
  return match ? match[1] : null;
}

function setSessionUrl(sessionId: string): void {
  window.location.hash = `session=${sessionId}`;
}

function paint(): void {
  const root = document.getElementById("app");
  if (!root) return;
  root.innerHTML = renderApp(state);
  bind(root);
}

function showError(err: unknown): void {
  const banner = err instanceof ApiError
    ? { kind: "error" as const, message: `${err.code}: ${err.message}`,
        retryable: err.retryable }
    : { kind: "error" as const, message: String(err), retryable: true };
  state = applyBanner(state, banner);
  paint();
}

async function refreshSession(sessionId: string): Promise<void> {
  state = applySession(state, await api.getSession(sessionId));
  paint();
}

async function startSession(category: string): Promise<void> {
  const created = await api.createSession(category);
  setSessionUrl(created.session_id);
  await refreshSession(created.session_id);
}

function bind(root: HTMLElement): void {
  root.querySelector("#start-btn")?.addEventListener("click", () => {
    const picker = root.querySelector<HTMLSelectElement>("#category");
    if (!picker) return;
    startSession(picker.value).catch(showError);
  });
  root.querySelector("#retry-btn")?.addEventListener("click", () => {
    void boot();
  });
  root.querySelector("#feedback-form")?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const input = root.querySelector<HTMLInputElement>("#feedback-text");
    const text = input?.value.trim() ?? "";
    if (!text || !state.session) return; // empty input disabled client-side
    api.sendFeedback(state.session.session_id, text)
      .then(() => refreshSession(state.session!.session_id))
      .catch(showError);
  });
  root.querySelectorAll<HTMLButtonElement>(".select-btn").forEach((btn) => {
    btn.addEventListener("click", () => {
      const itemId = btn.dataset.item;
      if (!itemId || !state.session) return;
      api.select(state.session.session_id, itemId)
        .then(() => refreshSession(state.session!.session_id))
        .catch(showError);
    });
  });
}

async function boot(): Promise<void> {
  try {
    const meta = await api.meta();
    state = { ...initialState(), categories: meta.categories };
    const existing = sessionIdFromUrl();
    if (existing) {
      await refreshSession(existing);
      return;
    }
    paint();
  } catch (err) {
    showError(err);
  }
}

window.addEventListener("hashchange", () => {
  const sessionId = sessionIdFromUrl();
  if (sessionId && state.session?.session_id !== sessionId) {
    refreshSession(sessionId).catch(showError);
  }
});

void boot();
