import { describe, expect, it } from "vitest";

import { initialState, reduce, viewOf, AppState } from "../src/state.js";
import { renderApp, escapeHtml } from "../src/render.js";
import { FOUR_PROFILES, statusDoc } from "./helpers.js";

function stateWith(phase: Parameters<typeof statusDoc>[0], extra = {}): AppState {
  let state = initialState();
  state = reduce(state, { type: "profiles", form: FOUR_PROFILES });
  state = reduce(state, { type: "status", doc: statusDoc(phase, extra) });
  return state;
}

describe("spawn form", () => {
  it("renders the four profiles in API order with the default selected", () => {
    const html = renderApp(stateWith("idle"));
    const ids = [...html.matchAll(/<option value="([^"]+)"/g)].map((m) => m[1]);
    expect(ids).toEqual(["batch-default", "batch-performance", "batch-manycore", "batch-highmem"]);
    expect(html).toContain('value="batch-default" selected');
    expect(html).toContain('data-action="spawn"');
  });

  it("disables submit and shows an operator banner with zero profiles", () => {
    let state = initialState();
    state = reduce(state, {
      type: "profiles",
      form: { field_name: "profile", choices: [], selected: "" },
    });
    state = reduce(state, { type: "status", doc: statusDoc("idle") });
    const html = renderApp(state);
    expect(html).toContain("no profiles are configured");
    expect(html).toMatch(/data-action="spawn"[^>]*disabled/);
  });

  it("keeps the form and shows an inline error after a rejected spawn", () => {
    let state = stateWith("idle");
    state = reduce(state, { type: "spawn-rejected", detail: "unknown profile" });
    const html = renderApp(state);
    expect(html).toContain("unknown profile");
    expect(html).toContain("<select");
  });

  it("escapes hostile display names", () => {
    let state = initialState();
    state = reduce(state, {
      type: "profiles",
      form: {
        field_name: "profile",
        choices: [{ id: "x", display_name: "<script>alert(1)</script>" }],
        selected: "x",
      },
    });
    state = reduce(state, { type: "status", doc: statusDoc("idle") });
    const html = renderApp(state);
    expect(html).not.toContain("<script>alert(1)</script>");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("session views", () => {
  it("pending view shows the phase badge, timer, and a single Cancel action", () => {
    const html = renderApp(stateWith("pending"), 130);
    expect(html).toContain("badge-pending");
    expect(html).toContain("30s");
    expect(actions(html)).toEqual(["stop"]);
  });

  it("running view shows Open plus Stop", () => {
    const html = renderApp(stateWith("running"));
    expect(html).toContain('href="/user/alice/"');
    expect(actions(html)).toEqual(["open", "stop"]);
  });

  it("failed view shows the reason and a retry action", () => {
    const html = renderApp(stateWith("failed", { failure_reason: "startup timeout" }));
    expect(html).toContain("startup timeout");
    expect(actions(html)).toEqual(["retry"]);
  });

  it("retry acknowledges the failure and returns to the form", () => {
    let state = stateWith("failed", { failure_reason: "startup timeout" });
    state = reduce(state, { type: "retry" });
    expect(viewOf(state)).toBe("form");
  });

  it("exactly one primary action per phase", () => {
    const expectations: Record<string, string[]> = {
      idle: ["spawn"],
      stopped: ["spawn"],
      submitting: ["stop"],
      pending: ["stop"],
      starting: ["stop"],
      running: ["open", "stop"],
      stopping: [],
    };
    for (const [phase, expected] of Object.entries(expectations)) {
      const html = renderApp(stateWith(phase as never));
      expect(actions(html), `phase ${phase}`).toEqual(expected);
    }
  });

  it("buttons are disabled while a mutation is in flight", () => {
    let state = stateWith("running");
    state = reduce(state, { type: "stop-sent" });
    expect(renderApp(state)).toMatch(/data-action="stop"[^>]*disabled/);
  });

  it("reconnect banner appears in any view", () => {
    let state = stateWith("pending");
    for (let i = 0; i < 3; i += 1) {
      state = reduce(state, { type: "status-error" });
    }
    expect(renderApp(state)).toContain("reconnecting");
  });
});

describe("escapeHtml", () => {
  it("neutralizes markup metacharacters", () => {
    expect(escapeHtml(`<a href="x">&'`)).toBe("&lt;a href=&quot;x&quot;&gt;&amp;&#39;");
  });
});

function actions(html: string): string[] {
  return [...html.matchAll(/data-action="([a-z]+)"/g)].map((m) => m[1]);
}
