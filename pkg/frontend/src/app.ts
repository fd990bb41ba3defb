/** DOM wiring for the review UI: setup form, clip review loop, report. */

import { ApiError, ReviewApi } from "./api.js";
import type { NextClip, SessionReport, VerdictValue } from "./api.js";
import {
  canSubmit,
  formatEstimate,
  initialState,
  progressLabel,
  progressPercent,
  reduce,
  tallySummary,
  verdictForKey,
} from "./session.js";
import type { SessionState } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class App {
  private state: SessionState | null = null;

  constructor(private readonly api: ReviewApi) {}

  mount(): void {
    el<HTMLFormElement>("setup-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.startSession();
    });
    el<HTMLButtonElement>("replay").addEventListener("click", () => this.replay());
    for (const verdict of ["outlier", "inlier", "indeterminate"] as VerdictValue[]) {
      el<HTMLButtonElement>(`verdict-${verdict}`).addEventListener("click", () =>
        void this.submit(verdict),
      );
    }
    document.addEventListener("keydown", (ev) => {
      if ((ev.target as HTMLElement | null)?.tagName === "INPUT") return;
      if ((ev.target as HTMLElement | null)?.tagName === "TEXTAREA") return;
      const verdict = verdictForKey(ev.key);
      if (verdict) void this.submit(verdict);
      if (ev.key === "r") this.replay();
    });
  }

  private async startSession(): Promise<void> {
    const speciesCode = el<HTMLInputElement>("species-code").value.trim();
    const runId = el<HTMLInputElement>("run-id").value.trim();
    const classUnderReview = el<HTMLSelectElement>("review-class").value;
    const seed = Number(el<HTMLInputElement>("seed").value) || 0;
    const maxN = Number(el<HTMLInputElement>("max-n").value) || 50;
    try {
      const session = await this.api.createSession({
        species_code: speciesCode,
        run_id: runId,
        class_under_review: classUnderReview,
        seed,
        max_n: maxN,
      });
      this.state = initialState(session.session_id);
      el("setup").hidden = true;
      el("review").hidden = false;
      el("session-label").textContent =
        `session ${session.session_id} · ${speciesCode}/${runId} · ${classUnderReview}`;
      await this.advance();
    } catch (err) {
      this.showError(err);
    }
  }

  private async advance(): Promise<void> {
    if (!this.state) return;
    const next = await this.api.nextClip(this.state.sessionId);
    this.state = reduce(this.state, { kind: "loaded", next });
    this.render(next);
    if (next.complete) await this.showReport();
  }

  private async submit(verdict: VerdictValue): Promise<void> {
    if (!this.state || !canSubmit(this.state)) return;
    const clipId = this.state.current?.clip_id;
    if (!clipId) return;
    this.state = reduce(this.state, { kind: "submit" });
    const commentBox = el<HTMLTextAreaElement>("comment");
    try {
      await this.api.submitVerdict(this.state.sessionId, {
        clip_id: clipId,
        verdict,
        comment: commentBox.value.trim() || undefined,
      });
      this.state = reduce(this.state, { kind: "accepted" });
      commentBox.value = "";
      await this.advance();
    } catch (err) {
      this.state = reduce(this.state, {
        kind: "failed",
        message: err instanceof Error ? err.message : String(err),
      });
      this.showError(err);
      if (err instanceof ApiError && err.status === 409) {
        // someone advanced the session elsewhere; resync
        await this.advance();
      }
    }
  }

  private render(next: NextClip): void {
    el("progress-label").textContent = progressLabel(next);
    el<HTMLProgressElement>("progress-bar").value = progressPercent(next);
    el("tallies").textContent = tallySummary(next.tallies);
    el("error").textContent = "";
    const clipPane = el("clip-pane");
    if (next.complete) {
      clipPane.hidden = true;
      return;
    }
    clipPane.hidden = false;
    el("clip-label").textContent = next.clip_id ?? "";
    el<HTMLImageElement>("spectrogram").src = next.spectrogram_url ?? "";
    const audio = el<HTMLAudioElement>("player");
    audio.src = next.audio_url ?? "";
    void audio.play().catch(() => {
      // autoplay may be blocked until the user interacts; replay covers it
    });
  }

  private replay(): void {
    const audio = el<HTMLAudioElement>("player");
    audio.currentTime = 0;
    void audio.play().catch(() => {});
  }

  private async showReport(): Promise<void> {
    if (!this.state) return;
    let report: SessionReport;
    try {
      report = await this.api.report(this.state.sessionId);
    } catch (err) {
      this.showError(err);
      return;
    }
    el("report").hidden = false;
    el("report-rate").textContent =
      `${report.positive} rate: ${formatEstimate(report.estimate)}`;
    el("report-tallies").textContent = tallySummary(report.tallies);
  }

  private showError(err: unknown): void {
    el("error").textContent = err instanceof Error ? err.message : String(err);
  }
}

export function start(): void {
  new App(new ReviewApi()).mount();
}
