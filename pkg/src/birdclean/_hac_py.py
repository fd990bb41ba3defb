"""Pure-NumPy fallback for the average-linkage agglomeration kernel.

Kept semantically identical to the Cython kernel in ``_hac_core``; the
benchmark in benchmarks/bench_hac.py compares the two.
"""

import numpy as np


def average_linkage(dist: np.ndarray):
    n = dist.shape[0]
    if dist.shape[1] != n:
        raise ValueError("distance matrix must be square")
    d = dist.astype(np.float64, copy=True)
    np.fill_diagonal(d, np.inf)
    label = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)

    merges = np.empty((n - 1, 2), dtype=np.int64)
    heights = np.empty(n - 1, dtype=np.float64)
    out_sizes = np.empty(n - 1, dtype=np.int64)

    for step in range(n - 1):
        dmin = d.min()
        ti, tj = np.nonzero(d == dmin)
        # exact ties resolve to the lexicographically smallest label pair
        pairs = [
            tuple(sorted((int(label[a]), int(label[b])))) + (int(a), int(b))
            for a, b in zip(ti, tj)
            if a < b
        ]
        lo, hi, bi, bj = min(pairs)
        merges[step] = (lo, hi)
        heights[step] = dmin
        si, sj = int(size[bi]), int(size[bj])
        out_sizes[step] = si + sj

        # Lance-Williams update for average linkage
        row = (si * d[bi] + sj * d[bj]) / (si + sj)
        d[bi] = row
        d[:, bi] = row
        d[bi, bi] = np.inf
        d[bj, :] = np.inf
        d[:, bj] = np.inf
        size[bi] = si + sj
        label[bi] = n + step

    return merges, heights, out_sizes
