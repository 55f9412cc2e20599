// HTML string rendering. Kept free of DOM APIs so tests can assert on
// markup without a browser; main.ts owns attachment and events.

import type { AppState } from "./state.js";
import {
  currentCandidates,
  distanceTrace,
  isReadOnly,
  lastTruncated,
  turnCount,
} from "./state.js";
import type { CandidateCard } from "./types.js";

const esc = (s: string): string =>
  s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");

export function renderCandidateCard(card: CandidateCard, maxDistance: number,
                                    selectable: boolean): string {
  const chips = card.attributes
    .map((a) => `<span class="chip">${esc(a)}</span>`)
    .join("");
  const bar = card.distance === null
    ? ""
    : `<div class="distance-bar">
         <div class="distance-fill" style="width:${
           Math.max(2, Math.round(100 * (1 - card.distance / (maxDistance || 1))))
         }%"></div>
         <span class="distance-label">${card.distance.toFixed(3)}</span>
       </div>`;
  const image = card.image_url
    ? `<img class="card-image" src="${esc(card.image_url)}" alt="">`
    : "";
  const button = selectable
    ? `<button class="select-btn" data-item="${esc(card.item_id)}">select</button>`
    : "";
  return `<div class="card" data-item="${esc(card.item_id)}">
    ${image}
    <div class="card-id">${esc(card.item_id)} <em>${esc(card.category)}</em></div>
    <div class="chips">${chips}</div>
    ${bar}
    ${button}
  </div>`;
}

export function renderCategoryPicker(categories: string[]): string {
  const options = categories
    .map((c) => `<option value="${esc(c)}">${esc(c)}</option>`)
    .join("");
  return `<select id="category">${options}</select>
    <button id="start-btn">start session</button>`;
}

export function renderHistory(state: AppState): string {
  const session = state.session;
  if (!session || session.turns.length === 0) return "";
  const rows = session.turns
    .map((t) => `<li class="turn">
        <span class="turn-no">turn ${t.turn_index}</span>
        <span class="shown">on ${esc(t.shown_item_id)}</span>
        <span class="said">&ldquo;${esc(t.feedback_text)}&rdquo;</span>
        ${t.truncated ? '<span class="truncated-note">truncated to 8 words</span>' : ""}
      </li>`)
    .join("");
  const trace = distanceTrace(state)
    .map((d) => d.toFixed(2))
    .join(" &rarr; ");
  return `<ol class="history">${rows}</ol>
    <div class="trace">top-1 distance: ${trace}</div>`;
}

export function renderApp(state: AppState): string {
  const banner = state.banner
    ? `<div class="banner ${state.banner.kind}">
         ${esc(state.banner.message)}
         ${state.banner.retryable ? '<button id="retry-btn">retry</button>' : ""}
       </div>`
    : "";
  if (!state.session) {
    return `${banner}
      <div class="start-pane">
        <h1>garment search</h1>
        ${renderCategoryPicker(state.categories)}
      </div>`;
  }
  const session = state.session;
  const readOnly = isReadOnly(state);
  const candidates = currentCandidates(state);
  const maxDistance = Math.max(
    ...candidates.map((c) => c.distance ?? 0), 0.001);
  const cards = candidates
    .map((c) => renderCandidateCard(c, maxDistance, !readOnly))
    .join("");
  const status = session.status === "completed"
    ? `<div class="done">completed: picked ${esc(session.selected_item_id ?? "")}</div>`
    : session.status === "abandoned"
      ? '<div class="done">session abandoned</div>'
      : "";
  const input = readOnly
    ? ""
    : `<form id="feedback-form">
         <input id="feedback-text" type="text"
                placeholder="describe the change, e.g. more floral, shorter sleeves">
         <button id="send-btn" type="submit">send</button>
       </form>`;
  const truncatedNote = lastTruncated(state)
    ? '<div class="truncated-note">feedback was truncated to 8 words</div>'
    : "";
  return `${banner}
    <div class="session-pane" data-session="${esc(session.session_id)}">
      <div class="session-head">
        <span>session ${esc(session.session_id.slice(0, 8))}</span>
        <span class="turn-counter">turn ${turnCount(state)}</span>
        <span class="status">${esc(session.status)}</span>
      </div>
      ${renderHistory(state)}
      ${truncatedNote}
      <div class="gallery">${cards}</div>
      ${input}
      ${status}
    </div>`;
}
