// View state as a pure projection of the service's SessionView plus
// transient UI flags. All retrieval logic stays on the server; the client
// only reshapes payloads for rendering.

import type { CandidateCard, SessionView } from "./types.js";

export interface BannerState {
  kind: "error" | "info";
  message: string;
  retryable: boolean;
}

export interface AppState {
  categories: string[];
  session: SessionView | null;
  banner: BannerState | null;
  busy: boolean;
}

export function initialState(): AppState {
  return { categories: [], session: null, banner: null, busy: false };
}

export function turnCount(state: AppState): number {
  return state.session ? state.session.turns.length : 0;
}

export function currentCandidates(state: AppState): CandidateCard[] {
  const session = state.session;
  if (!session) return [];
  if (session.turns.length === 0) return [session.initial_candidate];
  // service ordering is authoritative; never re-sort client-side
  return session.turns[session.turns.length - 1].candidates;
}

export function isReadOnly(state: AppState): boolean {
  return state.session !== null && state.session.status !== "active";
}

export function lastTruncated(state: AppState): boolean {
  const session = state.session;
  if (!session || session.turns.length === 0) return false;
  return session.turns[session.turns.length - 1].truncated;
}

/** Top-1 distance after each turn: the trace plotted beside the history. */
export function distanceTrace(state: AppState): number[] {
  const session = state.session;
  if (!session) return [];
  return session.turns
    .map((t) => (t.candidates.length ? t.candidates[0].distance : null))
    .filter((d): d is number => d !== null);
}

export function applySession(state: AppState, session: SessionView): AppState {
  return { ...state, session, banner: null };
}

export function applyBanner(state: AppState, banner: BannerState): AppState {
  return { ...state, banner };
}
