"""Compare the compiled average-linkage kernel against the NumPy fallback.

Both kernels are exact and deterministic; the point of the benchmark is
the constant factor. Run:

    python3 benchmarks/bench_hac.py [--sizes 100 200 400 800]
"""

import argparse
import time

import numpy as np
from scipy.spatial.distance import pdist, squareform

from birdclean import _hac_py

try:
    from birdclean import _hac_core

    HAVE_CORE = True
except ImportError:
    HAVE_CORE = False


def bench(kernel, dist, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        d = dist.copy()
        t0 = time.perf_counter()
        kernel.average_linkage(d)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400, 800])
    parser.add_argument("--dims", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'n':>6} {'python (s)':>12} {'cython (s)':>12} {'speedup':>9}")
    for n in args.sizes:
        points = rng.normal(size=(n, args.dims))
        dist = squareform(pdist(points))
        t_py = bench(_hac_py, dist)
        if HAVE_CORE:
            t_cy = bench(_hac_core, dist)
            # sanity: identical output
            m_py, h_py, s_py = _hac_py.average_linkage(dist.copy())
            m_cy, h_cy, s_cy = _hac_core.average_linkage(dist.copy())
            assert np.array_equal(m_py, m_cy) and np.array_equal(s_py, s_cy)
            assert np.allclose(h_py, h_cy, atol=1e-12)
            print(f"{n:>6} {t_py:>12.4f} {t_cy:>12.4f} {t_py / t_cy:>8.1f}x")
        else:
            print(f"{n:>6} {t_py:>12.4f} {'(not built)':>12} {'-':>9}")


if __name__ == "__main__":
    main()
