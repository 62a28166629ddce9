// Single-page adaptive-test client. The UI is a pure view of server state:
// every transition renders from the latest SessionResource, the session id
// lives in page state only, and all validation happens server-side.

import {
  ApiClient,
  ApiError,
  ModelCatalogEntry,
  SessionResource,
  Transcript,
} from "./api.js";

export type AppConfig = {
  // examinee-facing deployments hide the live estimate panel
  showEstimate: boolean;
};

const DEFAULT_CONFIG: AppConfig = { showEstimate: true };

type Screen = "loading" | "catalog" | "running" | "finished" | "fatal";

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function formatNumber(value: number, digits = 1): string {
  return value.toFixed(digits);
}

export class TestApp {
  private readonly config: AppConfig;
  private screen: Screen = "loading";
  private catalog: ModelCatalogEntry[] = [];
  private session: SessionResource | null = null;
  private transcript: Transcript | null = null;
  private trajectoryHidden = false;
  private selectedOutcome: number | null = null;
  private retainedOutcome: number | null = null;
  private pending = false;
  private errorMessage: string | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    config?: Partial<AppConfig>
  ) {
    this.config = { ...DEFAULT_CONFIG, ...config };
  }

  get sessionId(): string | null {
    return this.session ? this.session.session_id : null;
  }

  get isPending(): boolean {
    return this.pending;
  }

  async init(): Promise<void> {
    this.screen = "loading";
    this.render();
    try {
      this.catalog = await this.api.listModels();
      this.screen = "catalog";
      this.errorMessage = null;
    } catch (error) {
      this.screen = "fatal";
      this.errorMessage = describeError(error);
    }
    this.render();
  }

  async startTest(modelId: string): Promise<void> {
    if (this.pending) return;
    this.pending = true;
    this.render();
    try {
      const session = await this.api.createSession(modelId);
      this.session = session;
      this.errorMessage = null;
      await this.enterSessionState();
    } catch (error) {
      // no phantom session: stay on the picker with a banner
      this.session = null;
      this.errorMessage = describeError(error);
      this.screen = "catalog";
    } finally {
      this.pending = false;
      this.render();
    }
  }

  // stale-tab recovery and page-refresh resume share this path
  async resumeSession(sessionId: string): Promise<void> {
    this.session = await this.api.getSession(sessionId);
    this.selectedOutcome = null;
    this.retainedOutcome = null;
    await this.enterSessionState();
    this.render();
  }

  private async enterSessionState(): Promise<void> {
    if (!this.session) return;
    this.selectedOutcome = null;
    if (this.session.state === "finished") {
      this.screen = "finished";
      await this.loadTranscript();
    } else {
      this.screen = "running";
      this.transcript = null;
    }
  }

  private async loadTranscript(): Promise<void> {
    if (!this.session) return;
    try {
      this.transcript = await this.api.getTranscript(this.session.session_id);
      this.trajectoryHidden = false;
    } catch (error) {
      if (error instanceof ApiError && error.status === 403) {
        this.transcript = null;
        this.trajectoryHidden = true;
      } else {
        throw error;
      }
    }
  }

  selectOutcome(index: number): void {
    if (this.pending || this.screen !== "running") return;
    this.selectedOutcome = index;
    this.errorMessage = null;
    this.render();
  }

  async submitSelected(): Promise<void> {
    if (this.pending) return; // double-submit guard: one in-flight request
    const session = this.session;
    const question = session?.current_question;
    const outcome = this.selectedOutcome ?? this.retainedOutcome;
    if (!session || !question || outcome === null) return;
    this.pending = true;
    this.render();
    try {
      const next = await this.api.submitAnswer(session.session_id, question.id, outcome);
      this.session = next;
      this.selectedOutcome = null;
      this.retainedOutcome = null;
      this.errorMessage = null;
      await this.enterSessionState();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        // another tab advanced the session: resynchronize with the server
        await this.resumeSession(session.session_id);
      } else if (error instanceof ApiError) {
        this.errorMessage = describeError(error);
        this.selectedOutcome = null;
      } else {
        // network failure: retain the answer, retry on user action
        this.retainedOutcome = outcome;
        this.selectedOutcome = null;
        this.errorMessage = "Could not reach the test service. Your answer is kept; press Retry.";
      }
    } finally {
      this.pending = false;
      this.render();
    }
  }

  // -- rendering ------------------------------------------------------------

  render(): void {
    switch (this.screen) {
      case "loading":
        this.root.innerHTML = `<p class="loading">Loading…</p>`;
        return;
      case "fatal":
        this.renderFatal();
        return;
      case "catalog":
        this.renderCatalog();
        return;
      case "running":
        this.renderQuestion();
        return;
      case "finished":
        this.renderSummary();
        return;
    }
  }

  private renderFatal(): void {
    this.root.innerHTML = `
      <div class="error-banner" data-testid="error-banner">
        <p>${escapeHtml(this.errorMessage ?? "Service unavailable")}</p>
        <button type="button" data-testid="retry-init">Retry</button>
      </div>`;
    this.root
      .querySelector<HTMLButtonElement>('[data-testid="retry-init"]')!
      .addEventListener("click", () => void this.init());
  }

  private renderCatalog(): void {
    const banner = this.errorMessage
      ? `<div class="error-banner" data-testid="error-banner"><p>${escapeHtml(
          this.errorMessage
        )}</p></div>`
      : "";
    const entries = this.catalog
      .map(
        (model) => `
        <li>
          <button type="button" class="model-choice" data-testid="model-choice"
                  data-model-id="${escapeHtml(model.model_id)}" ${this.pending ? "disabled" : ""}>
            ${escapeHtml(model.model_id)}
            <span class="model-meta">${escapeHtml(model.kind)} · ${model.items} questions</span>
          </button>
        </li>`
      )
      .join("");
    this.root.innerHTML = `
      ${banner}
      <h1>Choose a test</h1>
      <ul class="model-picker" data-testid="model-picker">${entries}</ul>`;
    for (const button of this.root.querySelectorAll<HTMLButtonElement>(".model-choice")) {
      button.addEventListener("click", () => void this.startTest(button.dataset.modelId!));
    }
  }

  private renderQuestion(): void {
    const session = this.session!;
    const question = session.current_question!;
    const progressPct =
      session.progress.total > 0
        ? Math.round((session.progress.asked / session.progress.total) * 100)
        : 0;
    const options = question.options
      .map((label, index) => {
        const active = this.selectedOutcome === index ? " selected" : "";
        return `
          <button type="button" class="option${active}" data-testid="option"
                  data-outcome="${index}" ${this.pending ? "disabled" : ""}>
            ${escapeHtml(label)}
          </button>`;
      })
      .join("");
    const canSubmit =
      !this.pending && (this.selectedOutcome !== null || this.retainedOutcome !== null);
    const banner = this.errorMessage
      ? `<div class="error-banner" data-testid="error-banner"><p>${escapeHtml(
          this.errorMessage
        )}</p></div>`
      : "";
    this.root.innerHTML = `
      ${banner}
      <div class="progress" data-testid="progress"
           data-asked="${session.progress.asked}" data-total="${session.progress.total}">
        <div class="progress-bar" style="width: ${progressPct}%"></div>
        <span class="progress-label">${session.progress.asked} / ${session.progress.total}</span>
      </div>
      <div class="question-card" data-testid="question-card" data-question-id="${escapeHtml(
        question.id
      )}">
        <p class="question-text">${escapeHtml(question.text || question.id)}</p>
        <div class="options">${options}</div>
        <button type="button" class="submit" data-testid="submit" ${canSubmit ? "" : "disabled"}>
          ${this.retainedOutcome !== null ? "Retry" : "Submit answer"}
        </button>
      </div>
      ${this.config.showEstimate ? this.estimatePanelHtml() : ""}`;
    for (const button of this.root.querySelectorAll<HTMLButtonElement>(".option")) {
      button.addEventListener("click", () =>
        this.selectOutcome(Number(button.dataset.outcome))
      );
    }
    this.root
      .querySelector<HTMLButtonElement>('[data-testid="submit"]')!
      .addEventListener("click", () => void this.submitSelected());
  }

  private estimatePanelHtml(): string {
    const estimate = this.session!.estimate;
    const score =
      estimate.expected_score !== null
        ? `<span data-testid="live-score">expected score ${formatNumber(
            estimate.expected_score
          )}</span>`
        : "";
    const uncertainty =
      estimate.uncertainty !== null
        ? `<span data-testid="live-uncertainty">uncertainty ${formatNumber(
            estimate.uncertainty,
            3
          )}</span>`
        : "";
    return `<div class="estimate-panel" data-testid="estimate-panel">${score} ${uncertainty}</div>`;
  }

  private renderSummary(): void {
    const session = this.session!;
    const estimate = session.estimate;
    const expected =
      estimate.expected_score !== null
        ? formatNumber(estimate.expected_score)
        : String(estimate.value);
    const uncertainty =
      estimate.uncertainty !== null
        ? `<p class="uncertainty">uncertainty ${formatNumber(estimate.uncertainty, 3)}</p>`
        : "";
    const standardized = estimate.standardized
      ? `<p class="standardized" data-testid="standardized">
           z ${formatNumber(estimate.standardized.z, 2)} ·
           IQ ${formatNumber(estimate.standardized.iq, 0)}
         </p>`
      : "";
    this.root.innerHTML = `
      <div class="summary" data-testid="summary">
        <h1>Test finished</h1>
        <p class="expected-score" data-testid="expected-score"
           data-value="${estimate.expected_score ?? ""}">
          Estimated score: <strong>${expected}</strong>
        </p>
        ${uncertainty}
        ${standardized}
        <p class="question-count" data-testid="question-count"
           data-value="${session.progress.asked}">
          Questions answered: ${session.progress.asked}
        </p>
        <p class="stop-reason">Stopped by: ${escapeHtml(session.stop_reason ?? "unknown")}</p>
        ${this.trajectoryHtml()}
      </div>`;
  }

  private trajectoryHtml(): string {
    if (this.trajectoryHidden || !this.transcript) {
      return "";
    }
    const points = this.transcript.records.map((record) =>
      record.expected_score !== null
        ? record.expected_score
        : typeof record.estimate.value === "number"
          ? (record.estimate.value as number)
          : 0
    );
    if (points.length === 0) {
      return "";
    }
    const width = 260;
    const height = 80;
    const min = Math.min(...points);
    const max = Math.max(...points);
    const span = max - min || 1;
    const step = points.length > 1 ? width / (points.length - 1) : 0;
    const path = points
      .map((value, index) => {
        const x = points.length > 1 ? index * step : width / 2;
        const y = height - ((value - min) / span) * (height - 8) - 4;
        return `${x.toFixed(1)},${y.toFixed(1)}`;
      })
      .join(" ");
    return `
      <svg class="trajectory" data-testid="trajectory" data-points="${points.length}"
           viewBox="0 0 ${width} ${height}" role="img"
           aria-label="estimate trajectory over ${points.length} answers">
        <polyline fill="none" stroke="currentColor" stroke-width="2" points="${path}" />
      </svg>`;
  }
}

function describeError(error: unknown): string {
  if (error instanceof ApiError) {
    return `${error.message} (${error.code})`;
  }
  if (error instanceof Error) {
    return error.message;
  }
  return String(error);
}
