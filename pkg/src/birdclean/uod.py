"""Unsupervised outlier detection over latent codes.

Method #1 ranks whole flat clusters by their distance to the nearest big
cluster and discards the farthest ones within a budget. Method #2 ranks
individual points by their best-cluster membership density under a VaDE
mixture. Either feeds a majority-vote ensemble across independently
trained models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import hac
from .gmm import GmmParams, max_component_log_density, total_log_density


@dataclass
class UodConfig:
    n_models: int = 9
    flat_clusters: int = 50
    max_discard_fraction: float = 0.10
    max_discard_count: int | None = None  # absolute override of the fraction
    big_cluster_pct: float = 10.0
    vote_threshold: int | str = "majority"
    model_kind: str = "cae"
    score: str = "max_component"  # or "total" for full mixture density

    def __post_init__(self):
        if not 0 < self.max_discard_fraction < 1:
            raise ValueError("max_discard_fraction must be in (0, 1)")
        if not 0 < self.big_cluster_pct < 100:
            raise ValueError("big_cluster_pct must be in (0, 100)")
        if isinstance(self.vote_threshold, int) and not 1 <= self.vote_threshold <= self.n_models:
            raise ValueError("vote_threshold must be in [1, n_models]")

    def budget(self, n: int) -> int:
        if self.max_discard_count is not None:
            return self.max_discard_count
        return int(self.max_discard_fraction * n)

    def resolve_threshold(self) -> int:
        if self.vote_threshold == "majority":
            return self.n_models // 2 + 1
        return int(self.vote_threshold)


@dataclass
class EnsembleResult:
    tallies: dict[str, int]
    flagged: set[str]
    per_model_candidates: list[set[str]]
    vote_threshold: int
    config: UodConfig | None = None

    def to_json(self) -> str:
        doc = {
            "tallies": self.tallies,
            "flagged": sorted(self.flagged),
            "per_model_candidates": [sorted(s) for s in self.per_model_candidates],
            "vote_threshold": self.vote_threshold,
            "config": asdict(self.config) if self.config else None,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnsembleResult":
        doc = json.loads(text)
        cfg = UodConfig(**doc["config"]) if doc.get("config") else None
        return cls(
            tallies=doc["tallies"],
            flagged=set(doc["flagged"]),
            per_model_candidates=[set(s) for s in doc["per_model_candidates"]],
            vote_threshold=doc["vote_threshold"],
            config=cfg,
        )


class NoBigClusterError(RuntimeError):
    """No flat cluster reached the big-cluster size threshold."""


def method1_candidates(
    latents: np.ndarray,
    clip_ids: list[str],
    flat_clusters: int,
    budget: int,
    big_cluster_pct: float,
) -> set[str]:
    """HAC-based candidates: whole far-from-big clusters, within budget.

    Clusters are visited in decreasing distance-to-nearest-big order (ties
    to the smaller cluster); a cluster that would push the total past the
    budget is skipped and iteration continues. Big clusters never become
    candidates.
    """
    n = len(clip_ids)
    tree = hac.hac_average_linkage(latents)
    cut = hac.cut_flat_clusters(tree, min(flat_clusters, n))
    cut = hac.flag_big_clusters(latents, cut, big_cluster_pct)
    if not cut.big_flags.any():
        raise NoBigClusterError(
            f"no cluster holds >= {big_cluster_pct}% of the data; "
            "lower big_cluster_pct or inspect the latent space"
        )
    order = [
        cid
        for cid in range(1, cut.n_clusters + 1)
        if not cut.big_flags[cid - 1]
    ]
    order.sort(key=lambda cid: (-cut.d_big[cid - 1], cut.sizes[cid - 1]))
    chosen: set[str] = set()
    for cid in order:
        members = cut.members(cid)
        if len(chosen) + len(members) > budget:
            continue
        chosen.update(clip_ids[i] for i in members)
    return chosen


def method2_candidates(
    latents: np.ndarray,
    clip_ids: list[str],
    params: GmmParams,
    budget: int,
    score: str = "max_component",
) -> set[str]:
    """Mixture-density candidates: the budget lowest-scoring points."""
    scorer = max_component_log_density if score == "max_component" else total_log_density
    scores = scorer(params, latents)
    if not np.isfinite(scores).all():
        raise ValueError("non-finite mixture scores")
    order = np.argsort(scores, kind="stable")
    return {clip_ids[i] for i in order[:budget]}


def ensemble_vote(
    per_model_candidates: list[set[str]],
    vote_threshold: int | str,
    universe: list[str] | None = None,
    config: UodConfig | None = None,
) -> EnsembleResult:
    """Tally candidate designations and flag clips meeting the threshold."""
    n_models = len(per_model_candidates)
    if n_models < 1:
        raise ValueError("need at least one candidate set")
    if vote_threshold == "majority":
        threshold = n_models // 2 + 1
    else:
        threshold = int(vote_threshold)
        if not 1 <= threshold <= n_models:
            raise ValueError(f"vote_threshold must be in [1, {n_models}]")
    ids = universe if universe is not None else sorted(set().union(*per_model_candidates))
    tallies = {cid: 0 for cid in ids}
    for cands in per_model_candidates:
        for cid in cands:
            tallies[cid] = tallies.get(cid, 0) + 1
    flagged = {cid for cid, t in tallies.items() if t >= threshold}
    return EnsembleResult(
        tallies=tallies,
        flagged=flagged,
        per_model_candidates=per_model_candidates,
        vote_threshold=threshold,
        config=config,
    )


def match_outlier_class_size(
    per_model_candidates: list[set[str]],
    target_size: int,
    universe: list[str] | None = None,
) -> tuple[int, EnsembleResult]:
    """Pick the vote threshold whose flagged-set size is closest to the
    target; ties resolve to the larger (stricter) threshold."""
    if target_size < 0:
        raise ValueError("target_size must be >= 0")
    n_models = len(per_model_candidates)
    best = None
    for t in range(1, n_models + 1):
        result = ensemble_vote(per_model_candidates, t, universe=universe)
        key = (abs(len(result.flagged) - target_size), -t)
        if best is None or key < best[0]:
            best = (key, t, result)
    return best[1], best[2]


def save_result(result: EnsembleResult, root: str | Path, species_code: str, run_id: str) -> Path:
    out_dir = Path(root) / species_code / "uod"
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{run_id}.json"
    path.write_text(result.to_json())
    return path


def result_to_csv(result: EnsembleResult) -> str:
    lines = ["clip_id,tally,flagged"]
    for cid in sorted(result.tallies):
        lines.append(f"{cid},{result.tallies[cid]},{int(cid in result.flagged)}")
    return "\n".join(lines) + "\n"
