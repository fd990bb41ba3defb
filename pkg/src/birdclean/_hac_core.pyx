# cython: language_level=3
"""Average-linkage agglomeration kernel over a dense distance matrix.

Same merge semantics as the pure-Python fallback in ``_hac_py``: at each
step the globally closest pair of live clusters merges; exact-distance ties
resolve to the lexicographically smallest (label, label) pair. New clusters
are labeled n, n+1, ... in merge order.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()


@cython.boundscheck(False)
@cython.wraparound(False)
def average_linkage(cnp.ndarray[cnp.float64_t, ndim=2] dist):
    cdef Py_ssize_t n = dist.shape[0]
    if dist.shape[1] != n:
        raise ValueError("distance matrix must be square")
    cdef cnp.ndarray[cnp.float64_t, ndim=2] d = dist.copy()
    cdef cnp.ndarray[cnp.int64_t, ndim=1] label = np.arange(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] size = np.ones(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] active = np.ones(n, dtype=np.uint8)

    cdef cnp.ndarray[cnp.int64_t, ndim=2] merges = np.empty((n - 1, 2), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] heights = np.empty(n - 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out_sizes = np.empty(n - 1, dtype=np.int64)

    cdef Py_ssize_t step, i, j, k, bi, bj
    cdef double dmin, dij
    cdef cnp.int64_t la, lb, best_lo, best_hi, lo, hi, si, sj

    for step in range(n - 1):
        dmin = np.inf
        bi = -1
        bj = -1
        best_lo = 0
        best_hi = 0
        for i in range(n):
            if not active[i]:
                continue
            for j in range(i + 1, n):
                if not active[j]:
                    continue
                dij = d[i, j]
                if dij > dmin:
                    continue
                la = label[i]
                lb = label[j]
                if la < lb:
                    lo = la
                    hi = lb
                else:
                    lo = lb
                    hi = la
                if dij < dmin or lo < best_lo or (lo == best_lo and hi < best_hi):
                    dmin = dij
                    bi = i
                    bj = j
                    best_lo = lo
                    best_hi = hi
        merges[step, 0] = best_lo
        merges[step, 1] = best_hi
        heights[step] = dmin
        si = size[bi]
        sj = size[bj]
        out_sizes[step] = si + sj
        # Lance-Williams update for average linkage
        for k in range(n):
            if active[k] and k != bi and k != bj:
                d[bi, k] = (si * d[bi, k] + sj * d[bj, k]) / (si + sj)
                d[k, bi] = d[bi, k]
        active[bj] = 0
        size[bi] = si + sj
        label[bi] = n + step

    return merges, heights, out_sizes
