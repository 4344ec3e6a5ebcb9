// Session state machine, independent of the DOM so it can be driven
// headlessly in tests. Phases: start -> trial loop -> done. There is no
// back navigation; answering advances immediately and a trial index can
// be answered at most once.

import { ApiClient, Choice, SessionResult, TrialView } from "./api.js";

export type Phase = "start" | "trial" | "done";

export class SessionController {
  phase: Phase = "start";
  sessionId = "";
  nTrials = 0;
  trial: TrialView | null = null;
  result: SessionResult | null = null;

  private answered = new Set<number>();
  private submitting = false;

  constructor(private client: ApiClient) {}

  async begin(worker: string): Promise<void> {
    if (this.phase !== "start") throw new Error("session already started");
    const who = worker.trim();
    if (who === "") throw new Error("worker id required");
    const info = await this.client.createSession(who);
    this.sessionId = info.session_id;
    this.nTrials = info.n_trials;
    this.phase = "trial";
    await this.advance();
  }

  /** Answer the current trial. Ignored while a submission is in flight
   * (one active request per session); a repeat for an already answered
   * index is refused before it reaches the network. */
  async choose(side: Choice): Promise<void> {
    if (this.phase !== "trial" || this.trial === null || this.submitting) {
      return;
    }
    const index = this.trial.trial_index;
    if (this.answered.has(index)) {
      throw new Error(`trial ${index} already answered`);
    }
    this.submitting = true;
    try {
      await this.client.submitAnswer(this.sessionId, index, side);
      this.answered.add(index);
      await this.advance();
    } finally {
      this.submitting = false;
    }
  }

  answeredCount(): number {
    return this.answered.size;
  }

  private async advance(): Promise<void> {
    const next = await this.client.nextTrial(this.sessionId);
    if (next === null) {
      this.trial = null;
      this.result = await this.client.result(this.sessionId);
      this.phase = "done";
    } else {
      this.trial = next;
    }
  }
}
