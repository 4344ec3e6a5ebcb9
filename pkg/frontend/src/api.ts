// Typed client for the annotation service JSON API. The fetch function is
// injectable so tests can run against a scripted transport.

export interface SessionInfo {
  session_id: string;
  n_trials: number;
}

export interface TrialView {
  trial_index: number;
  reference_view: string;
  candidate_a_view: string;
  candidate_b_view: string;
  progress: number;
}

export interface AnswerAck {
  accepted: boolean;
  remaining: number;
}

export interface SessionResult {
  status: "active" | "complete" | "rejected";
  inconsistencies: number | null;
}

export interface ConvergencePoint {
  iteration: number;
  mean_ig: number;
}

export interface ConvergenceState {
  iteration: number;
  mean_information_gain: number;
  answers_total: number;
  history: ConvergencePoint[];
}

export type Choice = "a" | "b";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return resp.json() as Promise<T>;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class ApiClient {
  constructor(
    private fetchFn: FetchFn = (url, init) => fetch(url, init),
    private retries = 3,
    private retryDelayMs = 500,
  ) {}

  createSession(worker: string): Promise<SessionInfo> {
    return this.post<SessionInfo>("/api/sessions", { worker });
  }

  /** Next trial for the session, or null once the session is finished
   * (the server answers 410 with the terminal status). */
  async nextTrial(sessionId: string): Promise<TrialView | null> {
    const resp = await this.fetchFn(`/api/sessions/${sessionId}/next`);
    if (resp.status === 410) return null;
    const body = await parseOrThrow<TrialView | { done: boolean }>(resp);
    if ("done" in body && body.done) return null;
    return body as TrialView;
  }

  /** Submit one answer. Network failures are retried with the identical
   * payload; the server deduplicates by trial index, so a retry after a
   * lost response cannot record a second answer. */
  async submitAnswer(
    sessionId: string,
    trialIndex: number,
    chosen: Choice,
  ): Promise<AnswerAck> {
    const payload = { trial_index: trialIndex, chosen };
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      try {
        return await this.post<AnswerAck>(
          `/api/sessions/${sessionId}/answer`,
          payload,
        );
      } catch (err) {
        if (err instanceof ApiError) throw err; // server spoke; don't retry
        lastError = err;
        if (attempt < this.retries) await sleep(this.retryDelayMs);
      }
    }
    throw lastError;
  }

  async result(sessionId: string): Promise<SessionResult> {
    const resp = await this.fetchFn(`/api/sessions/${sessionId}/result`);
    return parseOrThrow<SessionResult>(resp);
  }

  async convergence(): Promise<ConvergenceState> {
    const resp = await this.fetchFn("/api/state/convergence");
    return parseOrThrow<ConvergenceState>(resp);
  }

  assetUrl(viewId: string): string {
    return `/api/assets/${encodeURIComponent(viewId)}`;
  }

  private async post<T>(url: string, body: unknown): Promise<T> {
    const resp = await this.fetchFn(url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return parseOrThrow<T>(resp);
  }
}
