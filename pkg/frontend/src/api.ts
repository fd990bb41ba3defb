/** Typed client for the review REST API.
 *
 * All calls go through an injectable `fetch` so tests can stub the
 * transport; the default binds to the page origin.
 */

export type VerdictValue = "outlier" | "inlier" | "indeterminate";

export interface SessionDoc {
  session_id: string;
  species_code: string;
  run_id: string;
  class_under_review: string;
  seed: number;
  sample_order: string[];
  cursor: number;
}

export interface NextClip {
  complete: boolean;
  clip_id?: string;
  spectrogram_url?: string;
  audio_url?: string;
  progress: { done: number; total: number };
  tallies: Record<VerdictValue, number>;
}

export interface RateEstimate {
  rate: number;
  moe: number;
  confidence: number;
  n_sampled: number;
  n_population: number;
}

export interface SessionReport {
  session_id: string;
  class_under_review: string;
  positive: VerdictValue;
  estimate: RateEstimate;
  tallies: Record<VerdictValue, number>;
  n_reviewed: number;
  n_sample: number;
}

export interface CreateSessionRequest {
  species_code: string;
  run_id: string;
  class_under_review?: string;
  seed?: number;
  max_n?: number;
}

export interface SubmitVerdictRequest {
  clip_id: string;
  verdict: VerdictValue;
  comment?: string;
  reviewer?: string;
  override?: boolean;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.base + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = await res.json();
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  createSession(req: CreateSessionRequest): Promise<SessionDoc> {
    return this.request("/api/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  nextClip(sessionId: string): Promise<NextClip> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  submitVerdict(sessionId: string, req: SubmitVerdictRequest): Promise<{ accepted: boolean; cursor: number; complete: boolean }> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}/verdicts`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  report(sessionId: string): Promise<SessionReport> {
    return this.request(`/api/sessions/${encodeURIComponent(sessionId)}/report`);
  }

  spectrogramUrl(clipId: string): string {
    return `${this.base}/api/clips/${encodeURIComponent(clipId)}/spectrogram.png`;
  }

  audioUrl(clipId: string): string {
    return `${this.base}/api/clips/${encodeURIComponent(clipId)}/segment.wav`;
  }
}
