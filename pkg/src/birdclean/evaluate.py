"""Cleaning-quality metrics: review sampling, rate estimation, entropy.

Rates (TPR over the flagged set, optionally FNR over the rest) come from
human verdicts on a seeded random sample; indeterminate verdicts are
excluded from both numerator and denominator. Spectrogram entropy is the
Shannon entropy of each clip's linear-power distribution over cells.
"""

from __future__ import annotations

import datetime
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm


class Verdict(str, enum.Enum):
    OUTLIER = "outlier"
    INLIER = "inlier"
    INDETERMINATE = "indeterminate"


@dataclass
class ReviewVerdict:
    clip_id: str
    verdict: Verdict
    comment: str | None = None
    reviewer: str = ""
    timestamp: str = field(
        default_factory=lambda: datetime.datetime.now(datetime.timezone.utc).isoformat()
    )

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "verdict": self.verdict.value,
            "comment": self.comment,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewVerdict":
        d = dict(d)
        d["verdict"] = Verdict(d["verdict"])
        return cls(**d)


@dataclass
class RateEstimate:
    rate: float
    moe: float
    confidence: float
    n_sampled: int
    n_population: int

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "moe": self.moe,
            "confidence": self.confidence,
            "n_sampled": self.n_sampled,
            "n_population": self.n_population,
        }


def sample_for_review(flagged: set[str] | list[str], seed: int, max_n: int) -> list[str]:
    """Seeded uniform sample without replacement, in draw order.

    max_n beyond the population returns the whole set shuffled.
    """
    ids = sorted(flagged)
    if not ids:
        raise ValueError("flagged set is empty")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    return [ids[i] for i in perm[: min(max_n, len(ids))]]


def estimate_rate(
    verdicts: list[ReviewVerdict],
    positive: Verdict = Verdict.OUTLIER,
    confidence: float = 0.95,
    n_population: int | None = None,
    finite_population_correction: bool = False,
) -> RateEstimate:
    """Sample proportion of the positive verdict with normal-approximation
    margin of error; indeterminate verdicts are excluded entirely."""
    decided = [v for v in verdicts if v.verdict != Verdict.INDETERMINATE]
    n = len(decided)
    if n == 0:
        raise ValueError("no determinate verdicts")
    p = sum(1 for v in decided if v.verdict == positive) / n
    z = norm.ppf(0.5 + confidence / 2.0)
    moe = z * math.sqrt(p * (1 - p) / n)
    pop = n_population if n_population is not None else n
    if finite_population_correction and pop > 1:
        moe *= math.sqrt(max(pop - n, 0) / (pop - 1))
    return RateEstimate(
        rate=p, moe=moe, confidence=confidence, n_sampled=n, n_population=pop
    )


def spectrogram_entropy(mel: np.ndarray) -> float:
    """Shannon entropy in bits of the clip's linear-power cell distribution."""
    mel = np.asarray(mel, dtype=np.float64)
    # clip matrices are dB-shifted so their floor sits at 0; floor cells
    # carry no power, hence the -1
    power = np.maximum(10.0 ** (mel / 10.0) - 1.0, 0.0)
    total = power.sum()
    if total <= 0.0:
        return 0.0
    p = (power / total).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def entropy_report(clips) -> dict:
    """Mean spectrogram entropy per category label plus the overall mean.

    Accepts any iterable of objects with .mel and .category.
    """
    per_label: dict[str, list[float]] = {}
    all_values: list[float] = []
    for clip in clips:
        h = spectrogram_entropy(clip.mel)
        label = clip.category.value if hasattr(clip.category, "value") else str(clip.category)
        per_label.setdefault(label, []).append(h)
        all_values.append(h)
    if not all_values:
        raise ValueError("no clips")
    return {
        "per_label": {k: float(np.mean(v)) for k, v in sorted(per_label.items())},
        "overall": float(np.mean(all_values)),
        "n_clips": len(all_values),
    }
