// UI state as a pure function of the latest status document plus in-flight
// action flags. Events go through reduce(); rendering never mutates state,
// so replaying a recorded status log reproduces identical views.

import type { OptionsForm, Phase, StatusDoc } from "./api.js";

export type View = "loading" | "form" | "pending" | "running" | "stopping" | "failed";

export interface AppState {
  form: OptionsForm | null;
  selected: string;
  status: StatusDoc | null;
  inflight: "spawn" | "stop" | null;
  banner: string | null;
  inlineError: string | null;
  failureAcknowledged: boolean;
  redirectedFor: string | null;
  consecutiveErrors: number;
}

export type Event =
  | { type: "profiles"; form: OptionsForm }
  | { type: "profiles-error"; detail: string }
  | { type: "select"; profileId: string }
  | { type: "status"; doc: StatusDoc }
  | { type: "status-error" }
  | { type: "spawn-sent" }
  | { type: "spawn-accepted"; doc: StatusDoc | null }
  | { type: "spawn-conflict"; doc: StatusDoc | null }
  | { type: "spawn-rejected"; detail: string }
  | { type: "stop-sent" }
  | { type: "stop-done" }
  | { type: "retry" };

const TERMINAL: Phase[] = ["stopped", "failed"];
const WAITING: Phase[] = ["submitting", "pending", "starting"];

// errors tolerated before the reconnect banner appears
export const BANNER_THRESHOLD = 3;

export function initialState(): AppState {
  return {
    form: null,
    selected: "",
    status: null,
    inflight: null,
    banner: null,
    inlineError: null,
    failureAcknowledged: false,
    redirectedFor: null,
    consecutiveErrors: 0,
  };
}

export function sessionKey(doc: StatusDoc): string {
  return `${doc.username}:${doc.since ?? ""}`;
}

export function viewOf(state: AppState): View {
  if (state.form === null || state.status === null) {
    return "loading";
  }
  const phase = state.status.phase;
  if (phase === "running") {
    return "running";
  }
  if (phase === "stopping") {
    return "stopping";
  }
  if (WAITING.includes(phase)) {
    return "pending";
  }
  if (phase === "failed" && !state.failureAcknowledged) {
    return "failed";
  }
  return "form"; // idle, stopped, acknowledged failure
}

export function reduce(state: AppState, event: Event): AppState {
  const next = { ...state };
  switch (event.type) {
    case "profiles":
      next.form = event.form;
      if (!next.selected || !event.form.choices.some((c) => c.id === next.selected)) {
        next.selected = event.form.selected;
      }
      break;
    case "profiles-error":
      next.banner = `cannot load profiles: ${event.detail}`;
      break;
    case "select":
      next.selected = event.profileId;
      break;
    case "status": {
      const previousKey = state.status ? sessionKey(state.status) : null;
      next.status = event.doc;
      next.consecutiveErrors = 0;
      next.banner = null;
      if (previousKey !== sessionKey(event.doc)) {
        next.failureAcknowledged = false;
      }
      if (TERMINAL.includes(event.doc.phase) || event.doc.phase === "idle") {
        if (state.inflight === "stop") {
          next.inflight = null;
        }
      }
      break;
    }
    case "status-error":
      next.consecutiveErrors = state.consecutiveErrors + 1;
      if (next.consecutiveErrors >= BANNER_THRESHOLD) {
        next.banner = "connection to the hub lost; reconnecting…";
      }
      break;
    case "spawn-sent":
      next.inflight = "spawn";
      next.inlineError = null;
      break;
    case "spawn-accepted":
      next.inflight = null;
      if (event.doc) {
        next.status = event.doc;
      }
      next.failureAcknowledged = false;
      break;
    case "spawn-conflict":
      next.inflight = null;
      next.inlineError = "session already running";
      if (event.doc) {
        next.status = event.doc;
      }
      break;
    case "spawn-rejected":
      // the form is preserved; only an inline error appears
      next.inflight = null;
      next.inlineError = event.detail || "spawn request rejected";
      break;
    case "stop-sent":
      next.inflight = "stop";
      break;
    case "stop-done":
      next.inflight = null;
      break;
    case "retry":
      next.failureAcknowledged = true;
      next.inlineError = null;
      break;
  }
  return next;
}

// The redirect to the running server fires exactly once per session
// identity; the caller records the navigation and stores the key back.
export function pendingRedirect(state: AppState): string | null {
  if (!state.status || state.status.phase !== "running" || !state.status.url) {
    return null;
  }
  if (state.redirectedFor === sessionKey(state.status)) {
    return null;
  }
  return state.status.url;
}

export function markRedirected(state: AppState): AppState {
  if (!state.status) {
    return state;
  }
  return { ...state, redirectedFor: sessionKey(state.status) };
}
