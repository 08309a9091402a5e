// IO shell: wires the hub API, the 1 Hz status poll, and DOM events to the
// pure state/render core. At most one mutation request is in flight at a
// time; buttons are disabled while it is.

import { AuthRequiredError, HubApi, HubClient } from "./api.js";
import {
  AppState,
  Event,
  initialState,
  markRedirected,
  pendingRedirect,
  reduce,
} from "./state.js";
import { renderApp } from "./render.js";

export interface Hooks {
  navigate: (url: string) => void;
  now: () => number;
  schedule: (fn: () => void, ms: number) => void;
}

export const POLL_INTERVAL_MS = 1000;
const MAX_BACKOFF_MS = 10_000;

export class App {
  state: AppState = initialState();
  private backoff = POLL_INTERVAL_MS;

  constructor(
    private readonly api: HubClient,
    private readonly hooks: Hooks,
    private readonly root: HTMLElement | null = null,
  ) {}

  dispatch(event: Event): void {
    this.state = reduce(this.state, event);
    const target = pendingRedirect(this.state);
    if (target) {
      this.state = markRedirected(this.state);
      this.hooks.navigate(target);
    }
    this.render();
  }

  render(): void {
    if (this.root) {
      this.root.innerHTML = renderApp(this.state, this.hooks.now());
    }
  }

  async start(): Promise<void> {
    try {
      this.dispatch({ type: "profiles", form: await this.api.getProfiles() });
    } catch (err) {
      if (err instanceof AuthRequiredError) {
        // let the fronting SSO take over with a full page load
        this.hooks.navigate("/hub/home");
        return;
      }
      this.dispatch({ type: "profiles-error", detail: String(err) });
    }
    await this.pollOnce();
    this.scheduleNext();
  }

  private scheduleNext(): void {
    this.hooks.schedule(() => {
      void this.pollOnce().then(() => this.scheduleNext());
    }, this.backoff);
  }

  async pollOnce(): Promise<void> {
    try {
      const doc = await this.api.getStatus();
      this.backoff = POLL_INTERVAL_MS;
      this.dispatch({ type: "status", doc });
    } catch (err) {
      if (err instanceof AuthRequiredError) {
        this.hooks.navigate("/hub/home");
        return;
      }
      this.backoff = Math.min(this.backoff * 2, MAX_BACKOFF_MS);
      this.dispatch({ type: "status-error" });
    }
  }

  async spawnSelected(): Promise<void> {
    if (this.state.inflight) {
      return;
    }
    this.dispatch({ type: "spawn-sent" });
    try {
      const result = await this.api.spawn(this.state.selected);
      if (result.code === 202) {
        this.dispatch({ type: "spawn-accepted", doc: result.doc });
      } else if (result.code === 409) {
        this.dispatch({ type: "spawn-conflict", doc: result.doc });
      } else {
        this.dispatch({ type: "spawn-rejected", detail: result.detail });
      }
    } catch (err) {
      this.dispatch({ type: "spawn-rejected", detail: String(err) });
    }
  }

  async stopSession(): Promise<void> {
    if (this.state.inflight) {
      return;
    }
    this.dispatch({ type: "stop-sent" });
    try {
      // 404 means it is already gone, which is the outcome we wanted
      await this.api.stop();
    } catch {
      // the next poll shows the truth either way
    }
    this.dispatch({ type: "stop-done" });
    await this.pollOnce();
  }

  bind(): void {
    if (!this.root) {
      return;
    }
    this.root.addEventListener("click", (raw) => {
      const target = raw.target as HTMLElement;
      const action = target.closest("[data-action]")?.getAttribute("data-action");
      if (action === "spawn") {
        raw.preventDefault();
        void this.spawnSelected();
      } else if (action === "stop") {
        raw.preventDefault();
        void this.stopSession();
      } else if (action === "retry") {
        raw.preventDefault();
        this.dispatch({ type: "retry" });
      }
    });
    this.root.addEventListener("submit", (raw) => raw.preventDefault());
    this.root.addEventListener("change", (raw) => {
      const target = raw.target as HTMLSelectElement;
      if (target.id === "profile") {
        this.dispatch({ type: "select", profileId: target.value });
      }
    });
  }
}

export function main(): void {
  const root = document.getElementById("app");
  if (!root) {
    return;
  }
  const app = new App(
    new HubApi(),
    {
      navigate: (url) => window.location.assign(url),
      now: () => Date.now() / 1000,
      schedule: (fn, ms) => window.setTimeout(fn, ms),
    },
    root,
  );
  app.bind();
  void app.start();
}
