/** Pure review-session logic, kept free of DOM and transport concerns. */

import type { NextClip, VerdictValue } from "./api.js";

/** Keyboard shortcuts for verdicts: o / i / u (case-insensitive). */
export function verdictForKey(key: string): VerdictValue | null {
  switch (key.toLowerCase()) {
    case "o":
      return "outlier";
    case "i":
      return "inlier";
    case "u":
      return "indeterminate";
    default:
      return null;
  }
}

export function progressLabel(next: Pick<NextClip, "progress">): string {
  const { done, total } = next.progress;
  return `${done} / ${total} reviewed`;
}

export function progressPercent(next: Pick<NextClip, "progress">): number {
  const { done, total } = next.progress;
  if (total <= 0) return 0;
  return Math.round((100 * done) / total);
}

/** "12.5% ± 3.2% (n=48 of 110, 95% CI)" */
export function formatEstimate(est: {
  rate: number;
  moe: number;
  confidence: number;
  n_sampled: number;
  n_population: number;
}): string {
  const pct = (x: number) => `${(100 * x).toFixed(1)}%`;
  const conf = Math.round(100 * est.confidence);
  return `${pct(est.rate)} ± ${pct(est.moe)} (n=${est.n_sampled} of ${est.n_population}, ${conf}% CI)`;
}

export function tallySummary(tallies: Record<VerdictValue, number>): string {
  return `outlier ${tallies.outlier} · inlier ${tallies.inlier} · indeterminate ${tallies.indeterminate}`;
}

export interface SessionState {
  sessionId: string;
  current: NextClip | null;
  submitting: boolean;
  error: string | null;
}

export function initialState(sessionId: string): SessionState {
  return { sessionId, current: null, submitting: false, error: null };
}

type Action =
  | { kind: "loaded"; next: NextClip }
  | { kind: "submit" }
  | { kind: "accepted" }
  | { kind: "failed"; message: string };

/** Small explicit reducer so transitions are unit-testable. */
export function reduce(state: SessionState, action: Action): SessionState {
  switch (action.kind) {
    case "loaded":
      return { ...state, current: action.next, submitting: false, error: null };
    case "submit":
      if (state.submitting || !state.current || state.current.complete) return state;
      return { ...state, submitting: true, error: null };
    case "accepted":
      return { ...state, submitting: false };
    case "failed":
      return { ...state, submitting: false, error: action.message };
  }
}

/** A verdict is submittable only when a clip is on screen and idle. */
export function canSubmit(state: SessionState): boolean {
  return !state.submitting && state.current !== null && !state.current.complete;
}
