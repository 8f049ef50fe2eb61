// Typed client for the experiment service. Submissions carry an idempotency
// key and retry on network failure, so a flaky connection can never
// double-record a response.

export interface SessionInfo {
  session_id: string;
  evaluator: string;
  total: number;
  answered: number;
}

export interface TrialPayload {
  done: boolean;
  trial_id?: string;
  melody?: string | null;
  sample_a?: string;
  sample_b?: string;
  answered: number;
  total: number;
}

export interface Ack {
  answered: number;
  total: number;
}

export interface ResponseSubmission {
  trial_id: string;
  choice: "A" | "B" | "missing";
  hard_errors_a: number;
  soft_errors_a: number;
  hard_errors_b: number;
  soft_errors_b: number;
}

export interface TypeRow {
  melody_type: string;
  n: number;
  fp_wins: number;
  missing: number;
  p_value: number | null;
}

export interface ErrorRow {
  model_tag: string;
  hard_errors: number;
  soft_errors: number;
  error_free_count: number;
  total_samples: number;
  percent_error_free: number;
  no_responses: boolean;
}

export interface ResultsPayload {
  per_type: TypeRow[];
  errors: ErrorRow[];
  total_trials: number;
  total_responses: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

let keyCounter = 0;

export function freshIdempotencyKey(): string {
  keyCounter += 1;
  return `ui-${Date.now().toString(36)}-${keyCounter}`;
}

export class ApiClient {
  constructor(
    private baseUrl = "",
    private fetchFn: typeof fetch = (...args) => fetch(...args),
    private retries = 3,
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        detail = JSON.stringify(await response.json());
      } catch {
        // keep the status text
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(experimentId: string, evaluator: string): Promise<SessionInfo> {
    return this.json(`/experiments/${experimentId}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ evaluator }),
    });
  }

  nextTrial(sessionId: string): Promise<TrialPayload> {
    return this.json(`/sessions/${sessionId}/next`);
  }

  /** Submit with a stable idempotency key; network errors retry the same key. */
  async submitResponse(sessionId: string, submission: ResponseSubmission): Promise<Ack> {
    const body = JSON.stringify({ ...submission, idempotency_key: freshIdempotencyKey() });
    let lastError: unknown;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      try {
        return await this.json<Ack>(`/sessions/${sessionId}/responses`, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body,
        });
      } catch (error) {
        if (error instanceof ApiError) throw error; // server verdicts are final
        lastError = error; // network failure: retry with the same key
      }
    }
    throw lastError;
  }

  fetchResults(experimentId: string): Promise<ResultsPayload> {
    return this.json(`/experiments/${experimentId}/results`);
  }

  async fetchMidi(ref: string): Promise<Uint8Array> {
    const response = await this.fetchFn(this.baseUrl + ref);
    if (!response.ok) throw new ApiError(response.status, `MIDI fetch failed for ${ref}`);
    return new Uint8Array(await response.arrayBuffer());
  }
}
