// Pure rendering: AppState in, HTML string out. Exactly one primary action
// is visible per phase: Spawn when idle/terminal, Cancel while waiting,
// Open+Stop when running.

import type { AppState } from "./state.js";
import { viewOf } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function elapsedLabel(since: number | null, now: number): string {
  if (since === null) {
    return "";
  }
  const seconds = Math.max(0, Math.floor(now - since));
  const minutes = Math.floor(seconds / 60);
  return minutes > 0 ? `${minutes}m ${seconds % 60}s` : `${seconds}s`;
}

function banner(state: AppState): string {
  if (!state.banner) {
    return "";
  }
  return `<div class="banner" role="alert">${escapeHtml(state.banner)}</div>`;
}

function renderForm(state: AppState): string {
  const form = state.form!;
  const empty = form.choices.length === 0;
  const options = form.choices
    .map((choice) => {
      const selected = choice.id === state.selected ? " selected" : "";
      return `<option value="${escapeHtml(choice.id)}"${selected}>${escapeHtml(choice.display_name)}</option>`;
    })
    .join("");
  const operatorError = empty
    ? `<div class="banner" role="alert">no profiles are configured; contact the operator</div>`
    : "";
  const inline = state.inlineError
    ? `<div class="inline-error">${escapeHtml(state.inlineError)}${
        state.status?.phase === "running" && state.status.url
          ? ` &mdash; <a href="${escapeHtml(state.status.url)}">open it</a>`
          : ""
      }</div>`
    : "";
  const disabled = empty || state.inflight !== null ? " disabled" : "";
  return `
    ${operatorError}
    <form id="spawn-form">
      <label for="profile">Server configuration</label>
      <select id="profile" name="profile"${empty ? " disabled" : ""}>${options}</select>
      ${inline}
      <button type="submit" data-action="spawn" class="primary"${disabled}>Spawn server</button>
    </form>`;
}

function phaseBadge(phase: string): string {
  return `<span class="badge badge-${escapeHtml(phase)}">${escapeHtml(phase)}</span>`;
}

function renderPending(state: AppState, now: number): string {
  const doc = state.status!;
  const elapsed = elapsedLabel(doc.since, now);
  return `
    <div class="pending">
      <p>Your server is starting ${phaseBadge(doc.phase)}
         <span class="elapsed">${escapeHtml(elapsed)}</span></p>
      <button data-action="stop" class="primary"${state.inflight ? " disabled" : ""}>Cancel</button>
    </div>`;
}

function renderStopping(state: AppState, now: number): string {
  const doc = state.status!;
  return `
    <div class="pending">
      <p>Shutting down ${phaseBadge(doc.phase)}
         <span class="elapsed">${escapeHtml(elapsedLabel(doc.since, now))}</span></p>
    </div>`;
}

function renderRunning(state: AppState): string {
  const doc = state.status!;
  const url = escapeHtml(doc.url ?? "#");
  return `
    <div class="running">
      <p>Your server is ready ${phaseBadge(doc.phase)}</p>
      <a class="primary button" data-action="open" href="${url}">Open</a>
      <button data-action="stop"${state.inflight ? " disabled" : ""}>Stop</button>
    </div>`;
}

function renderFailed(state: AppState): string {
  const doc = state.status!;
  const reason = doc.failure_reason ?? "unknown failure";
  return `
    <div class="failed">
      <div class="banner" role="alert">server failed: ${escapeHtml(reason)}</div>
      <button data-action="retry" class="primary">Retry</button>
    </div>`;
}

export function renderApp(state: AppState, now: number = 0): string {
  const view = viewOf(state);
  let body: string;
  switch (view) {
    case "loading":
      body = `<p class="loading">loading&hellip;</p>`;
      break;
    case "form":
      body = renderForm(state);
      break;
    case "pending":
      body = renderPending(state, now);
      break;
    case "stopping":
      body = renderStopping(state, now);
      break;
    case "running":
      body = renderRunning(state);
      break;
    case "failed":
      body = renderFailed(state);
      break;
  }
  const user = state.status ? `<span class="user">${escapeHtml(state.status.username)}</span>` : "";
  return `
    <header><h1>Interactive sessions</h1>${user}</header>
    ${banner(state)}
    <main data-view="${view}">${body}</main>`;
}
