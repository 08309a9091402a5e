// Typed client for the hub HTTP API. The UI talks to these four endpoints
// and same-origin /user/... paths, nothing else.

export type Phase =
  | "idle"
  | "submitting"
  | "pending"
  | "starting"
  | "running"
  | "stopping"
  | "stopped"
  | "failed";

export interface ProfileChoice {
  id: string;
  display_name: string;
}

export interface OptionsForm {
  field_name: string;
  choices: ProfileChoice[];
  selected: string;
}

export interface StatusDoc {
  username: string;
  phase: Phase;
  profile_id: string | null;
  address: string | null;
  url: string | null;
  failure_reason: string | null;
  since: number | null;
}

export class AuthRequiredError extends Error {
  constructor() {
    super("authentication required");
  }
}

export interface SpawnResult {
  code: number; // 202 accepted, 409 session exists, 400 bad profile
  doc: StatusDoc | null;
  detail: string;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface HubClient {
  getProfiles(): Promise<OptionsForm>;
  getStatus(): Promise<StatusDoc>;
  spawn(profileId: string): Promise<SpawnResult>;
  stop(): Promise<number>;
}

export class HubApi implements HubClient {
  constructor(
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
    private readonly base: string = "",
  ) {}

  private async get(path: string): Promise<Response> {
    const resp = await this.fetchFn(this.base + path, {
      redirect: "manual",
      headers: { Accept: "application/json" },
    });
    // an SSO redirect (302) surfaces as an opaque redirect or as the status itself
    if (resp.type === "opaqueredirect" || resp.status === 302 || resp.status === 401) {
      throw new AuthRequiredError();
    }
    return resp;
  }

  async getProfiles(): Promise<OptionsForm> {
    const resp = await this.get("/hub/api/profiles");
    if (!resp.ok) {
      throw new Error(`profiles endpoint answered ${resp.status}`);
    }
    return (await resp.json()) as OptionsForm;
  }

  async getStatus(): Promise<StatusDoc> {
    const resp = await this.get("/hub/api/status");
    if (!resp.ok) {
      throw new Error(`status endpoint answered ${resp.status}`);
    }
    return (await resp.json()) as StatusDoc;
  }

  async spawn(profileId: string): Promise<SpawnResult> {
    // the enumerated profile id is the only datum ever sent
    const resp = await this.fetchFn(this.base + "/hub/api/spawn", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ profile_id: profileId }),
    });
    let doc: StatusDoc | null = null;
    let detail = "";
    try {
      const parsed = await resp.json();
      detail = typeof parsed.detail === "string" ? parsed.detail : "";
      doc = (parsed.session ?? (parsed.phase ? parsed : null)) as StatusDoc | null;
    } catch {
      doc = null;
    }
    return { code: resp.status, doc, detail };
  }

  async stop(): Promise<number> {
    const resp = await this.fetchFn(this.base + "/hub/api/stop", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: "{}",
    });
    return resp.status;
  }
}
