import type { HubClient, OptionsForm, SpawnResult, StatusDoc } from "../src/api.js";
import { AuthRequiredError } from "../src/api.js";
import { App, Hooks } from "../src/app.js";

export const FOUR_PROFILES: OptionsForm = {
  field_name: "profile",
  choices: [
    { id: "batch-default", display_name: "Batch job (default)" },
    { id: "batch-performance", display_name: "Batch job (performance)" },
    { id: "batch-manycore", display_name: "Batch job (many cores)" },
    { id: "batch-highmem", display_name: "Batch job (high memory)" },
  ],
  selected: "batch-default",
};

export function statusDoc(phase: StatusDoc["phase"], extra: Partial<StatusDoc> = {}): StatusDoc {
  return {
    username: "alice",
    phase,
    profile_id: phase === "idle" ? null : "batch-default",
    address: phase === "running" ? "http://127.0.0.1:40001/user/alice" : null,
    url: phase === "running" ? "/user/alice/" : null,
    failure_reason: null,
    since: 100,
    ...extra,
  };
}

export const NETWORK_ERROR = Symbol("network-error");
export const AUTH_REQUIRED = Symbol("auth-required");
export type ScriptedStatus = StatusDoc | typeof NETWORK_ERROR | typeof AUTH_REQUIRED;

export class FakeHub implements HubClient {
  statuses: ScriptedStatus[] = [];
  profilesResult: OptionsForm | typeof AUTH_REQUIRED = FOUR_PROFILES;
  spawnResults: SpawnResult[] = [];
  stopResults: number[] = [];
  spawnBodies: string[] = [];
  stopCalls = 0;

  private lastStatus: StatusDoc = statusDoc("idle");

  async getProfiles(): Promise<OptionsForm> {
    if (this.profilesResult === AUTH_REQUIRED) {
      throw new AuthRequiredError();
    }
    return this.profilesResult;
  }

  async getStatus(): Promise<StatusDoc> {
    const next = this.statuses.length > 0 ? this.statuses.shift()! : this.lastStatus;
    if (next === NETWORK_ERROR) {
      throw new Error("connection refused");
    }
    if (next === AUTH_REQUIRED) {
      throw new AuthRequiredError();
    }
    this.lastStatus = next;
    return next;
  }

  async spawn(profileId: string): Promise<SpawnResult> {
    this.spawnBodies.push(JSON.stringify({ profile_id: profileId }));
    return this.spawnResults.shift() ?? { code: 202, doc: statusDoc("submitting"), detail: "" };
  }

  async stop(): Promise<number> {
    this.stopCalls += 1;
    return this.stopResults.shift() ?? 200;
  }
}

export interface Harness {
  app: App;
  hub: FakeHub;
  navigations: string[];
  flushTimers: (steps?: number) => Promise<void>;
}

export function makeHarness(root: HTMLElement | null = null): Harness {
  const hub = new FakeHub();
  const navigations: string[] = [];
  const queued: Array<() => void> = [];
  const hooks: Hooks = {
    navigate: (url) => navigations.push(url),
    now: () => 130,
    schedule: (fn) => queued.push(fn),
  };
  const app = new App(hub, hooks, root);
  const flushTimers = async (steps = 1) => {
    for (let i = 0; i < steps; i += 1) {
      const fn = queued.shift();
      if (!fn) {
        break;
      }
      fn();
      // let the poll promise settle
      await Promise.resolve();
      await Promise.resolve();
      await Promise.resolve();
    }
  };
  return { app, hub, navigations, flushTimers };
}
