// In-memory stand-in for the annotation service, mirroring its HTTP
// semantics (409 on out-of-order, 410 after completion, idempotent answer
// acks). Tests inspect `received` (every JSON payload handed to the
// client) and `recorded` (answers the "server" stored).

import type { FetchFn } from "../src/api.js";

export interface RecordedAnswer {
  trial_index: number;
  chosen: string;
}

export interface FakeOptions {
  nTrials?: number;
  verdict?: "complete" | "rejected";
  inconsistencies?: number;
  /** Drop the network (reject) for the first N answer submissions after
   * the server has already stored the answer, simulating a lost response. */
  dropAnswerResponses?: number;
}

export interface FakeService {
  fetchFn: FetchFn;
  received: unknown[];
  requests: { url: string; body: unknown }[];
  recorded: RecordedAnswer[];
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function makeFakeService(options: FakeOptions = {}): FakeService {
  const nTrials = options.nTrials ?? 5;
  const verdict = options.verdict ?? "complete";
  let dropsLeft = options.dropAnswerResponses ?? 0;

  const received: unknown[] = [];
  const requests: { url: string; body: unknown }[] = [];
  const recorded: RecordedAnswer[] = [];
  const acks = new Map<number, unknown>();
  let cursor = 0;
  let status: "active" | "complete" | "rejected" = "active";

  const reply = (code: number, body: unknown): Response => {
    received.push(body);
    return json(code, body);
  };

  const fetchFn: FetchFn = async (url, init) => {
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    requests.push({ url, body });

    if (url === "/api/sessions" && init?.method === "POST") {
      return reply(201, { session_id: "s1", n_trials: nTrials });
    }
    if (url.endsWith("/next")) {
      if (status !== "active") return reply(410, { detail: `session ${status}` });
      if (cursor >= nTrials) return reply(200, { done: true });
      return reply(200, {
        trial_index: cursor,
        reference_view: `v_ref_${cursor}`,
        candidate_a_view: `v_a_${cursor}`,
        candidate_b_view: `v_b_${cursor}`,
        progress: cursor / nTrials,
      });
    }
    if (url.endsWith("/answer")) {
      const index = body.trial_index as number;
      if (acks.has(index)) return reply(200, acks.get(index));
      if (status !== "active") return reply(410, { detail: `session ${status}` });
      if (index !== cursor) return reply(409, { detail: "out-of-order trial index" });
      recorded.push({ trial_index: index, chosen: body.chosen });
      cursor += 1;
      if (cursor === nTrials) status = verdict;
      const ack = { accepted: true, remaining: nTrials - cursor };
      acks.set(index, ack);
      if (dropsLeft > 0) {
        dropsLeft -= 1;
        throw new TypeError("network error"); // answer stored, response lost
      }
      return reply(200, ack);
    }
    if (url.endsWith("/result")) {
      return reply(200, {
        status,
        inconsistencies: status === "active" ? null : options.inconsistencies ?? 0,
      });
    }
    if (url === "/api/state/convergence") {
      return reply(200, {
        iteration: 2,
        mean_information_gain: 0.031,
        answers_total: 190,
        history: [
          { iteration: 1, mean_ig: 0.21 },
          { iteration: 2, mean_ig: 0.031 },
        ],
      });
    }
    return reply(404, { detail: "unknown route" });
  };

  return { fetchFn, received, requests, recorded };
}
