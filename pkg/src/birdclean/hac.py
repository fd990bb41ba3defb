"""Hierarchical agglomerative clustering of latent codes.

Average linkage over Euclidean distances, with a full merge-tree record,
flat-cluster extraction, big-cluster flagging with distance-to-big values,
and truncated dendrogram export.

The merge loop runs in the compiled kernel (``birdclean._hac_core``) when
the extension built, otherwise in the NumPy fallback. Both are exact; the
kernel is just faster. ``BIRDCLEAN_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, squareform, pdist

if os.environ.get("BIRDCLEAN_PURE_PYTHON"):
    from . import _hac_py as _kernel

    KERNEL = "python"
else:
    try:
        from . import _hac_core as _kernel  # type: ignore[attr-defined]

        KERNEL = "cython"
    except ImportError:
        from . import _hac_py as _kernel

        KERNEL = "python"


@dataclass
class MergeTree:
    """Full agglomeration history over ``n_leaves`` points.

    Merge rows are (left_label, right_label, distance, new_size); leaves are
    labeled 0..n-1 and the cluster created by merge i gets label n+i.
    """

    n_leaves: int
    merges: list[tuple[int, int, float, int]]

    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def to_json(self) -> str:
        return json.dumps(
            {"n_leaves": self.n_leaves, "merges": [list(m) for m in self.merges]}
        )

    @classmethod
    def from_json(cls, text: str) -> "MergeTree":
        doc = json.loads(text)
        merges = [(int(a), int(b), float(d), int(s)) for a, b, d, s in doc["merges"]]
        return cls(n_leaves=int(doc["n_leaves"]), merges=merges)


@dataclass
class FlatClustering:
    """C flat clusters over the leaves, 1-based, numbered by smallest leaf."""

    assignments: np.ndarray  # leaf index -> cluster id in 1..C
    sizes: np.ndarray  # per cluster id - 1
    big_flags: np.ndarray = field(default=None)
    d_big: np.ndarray = field(default=None)

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    def members(self, cluster: int) -> np.ndarray:
        return np.nonzero(self.assignments == cluster)[0]


def hac_average_linkage(points: np.ndarray) -> MergeTree:
    """Exact average-linkage HAC over Euclidean distances.

    Ties in merge distance break to the lexicographically smallest label
    pair so trees are reproducible across ensemble members.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("need at least 2 points of equal dimension")
    dist = squareform(pdist(points))
    merges, heights, sizes = _kernel.average_linkage(dist)
    rows = [
        (int(merges[i, 0]), int(merges[i, 1]), float(heights[i]), int(sizes[i]))
        for i in range(len(heights))
    ]
    return MergeTree(n_leaves=points.shape[0], merges=rows)


def cut_flat_clusters(tree: MergeTree, n_clusters: int) -> FlatClustering:
    """Undo the last C-1 merges; the surviving subtrees are the clusters."""
    n = tree.n_leaves
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must be in [1, {n}]")
    parent = np.arange(n + len(tree.merges), dtype=np.int64)

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, (a, b, _, _) in enumerate(tree.merges[: n - n_clusters]):
        node = n + i
        parent[find(a)] = node
        parent[find(b)] = node

    roots = np.array([find(i) for i in range(n)])
    order = {}
    assignments = np.zeros(n, dtype=np.int64)
    for leaf in range(n):  # number clusters 1..C by smallest member leaf
        r = roots[leaf]
        if r not in order:
            order[r] = len(order) + 1
        assignments[leaf] = order[r]
    sizes = np.bincount(assignments)[1:]
    return FlatClustering(assignments=assignments, sizes=sizes)


def inter_cluster_distance(
    points: np.ndarray, members_a: np.ndarray, members_b: np.ndarray
) -> float:
    """Average linkage between two disjoint member sets."""
    members_a = np.asarray(members_a)
    members_b = np.asarray(members_b)
    if len(members_a) == 0 or len(members_b) == 0:
        raise ValueError("member sets must be non-empty")
    if np.intersect1d(members_a, members_b).size:
        raise ValueError("member sets overlap")
    d = cdist(points[members_a], points[members_b])
    return float(d.mean())


def flag_big_clusters(
    points: np.ndarray, clustering: FlatClustering, big_pct: float
) -> FlatClustering:
    """Mark clusters holding >= big_pct% of the leaves and fill d_big.

    d_big is each cluster's minimum average-linkage distance to any big
    cluster (0 for big clusters themselves), computed directly between the
    flat clusters rather than read off the merge tree: flat-cluster pairs
    do not in general merge as intact units.
    """
    n = int(clustering.sizes.sum())
    threshold = big_pct / 100.0 * n
    big_flags = clustering.sizes >= threshold
    c = clustering.n_clusters
    d_big = np.zeros(c)
    big_ids = np.nonzero(big_flags)[0] + 1
    if len(big_ids):
        for cid in range(1, c + 1):
            if big_flags[cid - 1]:
                continue
            d_big[cid - 1] = min(
                inter_cluster_distance(
                    points, clustering.members(cid), clustering.members(int(b))
                )
                for b in big_ids
            )
    return FlatClustering(
        assignments=clustering.assignments,
        sizes=clustering.sizes,
        big_flags=big_flags,
        d_big=d_big,
    )


@dataclass
class TruncatedDendrogram:
    """The last k flat clusters and the final k-1 merges, plot-ready."""

    n_leaves: int
    group_sizes: list[int]  # sizes of the k base groups, by smallest leaf
    group_labels: list[int]  # tree node label of each base group
    merges: list[tuple[int, int, float, int]]  # final k-1 merge rows

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_leaves": self.n_leaves,
                "group_sizes": self.group_sizes,
                "group_labels": self.group_labels,
                "merges": [list(m) for m in self.merges],
            }
        )


def dendrogram_truncated(tree: MergeTree, last_k: int) -> TruncatedDendrogram:
    """Describe the final last_k-1 merges with subtree sizes for plotting."""
    n = tree.n_leaves
    if not 1 <= last_k <= n:
        raise ValueError(f"last_k must be in [1, {n}]")
    cut = cut_flat_clusters(tree, last_k)
    # node label for each group: the root of its subtree after the cut
    group_labels = []
    group_sizes = []
    n_applied = n - last_k
    parent = np.arange(n + len(tree.merges), dtype=np.int64)
    for i, (a, b, _, _) in enumerate(tree.merges[:n_applied]):
        parent[a] = n + i
        parent[b] = n + i
    for cid in range(1, last_k + 1):
        leaf = int(cut.members(cid)[0])
        node = leaf
        while parent[node] != node:
            node = parent[node]
        group_labels.append(node)
        group_sizes.append(int(cut.sizes[cid - 1]))
    return TruncatedDendrogram(
        n_leaves=n,
        group_sizes=group_sizes,
        group_labels=group_labels,
        merges=list(tree.merges[n_applied:]),
    )


def plot_dendrogram(desc: TruncatedDendrogram, path: str) -> None:
    """Render the truncated dendrogram with group sizes in parentheses."""
    from scipy.cluster.hierarchy import dendrogram as scipy_dendro
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = len(desc.group_labels)
    n = desc.n_leaves
    first_row = (n - 1) - (k - 1)  # index of the first retained merge
    # relabel base groups 0..k-1 and created nodes k..2k-2
    relabel = {lab: i for i, lab in enumerate(desc.group_labels)}
    # scipy wants counts in base-group units; true sizes go on the labels
    counts = {i: 1 for i in range(k)}
    link = np.zeros((k - 1, 4))
    for i, (a, b, dist, _) in enumerate(desc.merges):
        ra, rb = relabel[a], relabel[b]
        link[i] = (ra, rb, dist, counts[ra] + counts[rb])
        counts[k + i] = counts[ra] + counts[rb]
        relabel[n + first_row + i] = k + i
    fig, ax = plt.subplots(figsize=(10, 5))
    scipy_dendro(
        link,
        labels=[f"({s})" for s in desc.group_sizes],
        ax=ax,
        color_threshold=0.0,
    )
    ax.set_ylabel("merge distance")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
