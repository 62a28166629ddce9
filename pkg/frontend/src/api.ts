// Typed client for the session service JSON API. The wire contract is the
// sole interface between the UI and the engine; no model logic lives here.

export type QuestionView = {
  id: string;
  text: string;
  options: string[];
};

export type Standardized = { z: number; iq: number };

export type EstimateView = {
  kind: "theta" | "skill-marginals" | "score";
  value: unknown;
  uncertainty: number | null;
  expected_score: number | null;
  standardized?: Standardized;
};

export type SessionResource = {
  session_id: string;
  model_id: string;
  state: "running" | "finished";
  current_question: QuestionView | null;
  progress: { asked: number; total: number };
  estimate: EstimateView;
  stop_reason: string | null;
};

export type ModelCatalogEntry = {
  model_id: string;
  kind: string;
  items: number;
};

export type TranscriptRecord = {
  step: number;
  question_id: string;
  outcome: number | string;
  estimate: { kind: string; value: unknown };
  uncertainty: number | null;
  expected_score: number | null;
};

export type Transcript = {
  records: TranscriptRecord[];
  final_estimate: EstimateView;
  stop_reason: string;
  aborted: boolean;
};

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
    public readonly detail?: unknown
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args)
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const body = await response.json().catch(() => null);
    if (!response.ok) {
      const code = body && typeof body.code === "string" ? body.code : "http_error";
      const message =
        body && typeof body.message === "string"
          ? body.message
          : `request failed with status ${response.status}`;
      throw new ApiError(response.status, code, message, body?.detail);
    }
    return body as T;
  }

  async listModels(): Promise<ModelCatalogEntry[]> {
    const body = await this.request<{ models: ModelCatalogEntry[] }>("/models");
    return body.models;
  }

  async createSession(modelId: string): Promise<SessionResource> {
    return this.request<SessionResource>("/sessions", {
      method: "POST",
      body: JSON.stringify({ model_id: modelId }),
    });
  }

  async getSession(sessionId: string): Promise<SessionResource> {
    return this.request<SessionResource>(`/sessions/${sessionId}`);
  }

  async submitAnswer(
    sessionId: string,
    questionId: string,
    outcome: number
  ): Promise<SessionResource> {
    return this.request<SessionResource>(`/sessions/${sessionId}/answers`, {
      method: "POST",
      body: JSON.stringify({ question_id: questionId, outcome }),
    });
  }

  async getTranscript(sessionId: string): Promise<Transcript> {
    return this.request<Transcript>(`/sessions/${sessionId}/transcript`);
  }
}
