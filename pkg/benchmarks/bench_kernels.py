"""Compare the numba kernels with the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--traces 2000]

Both paths are called directly, so the ``IPWF_DISABLE_NUMBA`` flag does
not matter here.  Results are checked for equality before timing.
"""
import argparse
import time

import numpy as np

from ipwf import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def make_traces(rng, n):
    out = []
    for _ in range(n):
        k = int(rng.integers(3, 40))
        b = rng.integers(0, 3, size=k)
        out.append((100 + b * 300 + rng.integers(0, 100, size=k)
                    + rng.integers(-10, 11, size=k)).astype(np.float64))
    return out


def make_db(rng, n_sites, vocab, per_site):
    rows = [np.sort(rng.choice(vocab, size=per_site, replace=False)) for _ in range(n_sites)]
    indptr = np.concatenate(([0], np.cumsum([len(r) for r in rows]))).astype(np.int64)
    return indptr, np.concatenate(rows).astype(np.int64), rng.random(vocab) * 18


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--traces", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not available (or IPWF_DISABLE_NUMBA is set)")
    rng = np.random.default_rng(args.seed)

    traces = make_traces(rng, args.traces)
    indptr, indices, bits = make_db(rng, 5000, 60000, 15)
    queries = [np.unique(rng.choice(indices, size=15)) for _ in range(args.traces)]
    pools = [rng.choice(5000, size=int(rng.integers(1, 50)), replace=False).astype(np.int64)
             for _ in range(args.traces)]

    cases = {
        "kmeans optimal": (
            lambda: [kernels._kmeans_1d_optimal_nb(t, 3) for t in traces],
            lambda: [kernels.kmeans_1d_optimal_numpy(t, 3) for t in traces]),
        "kmeans lloyd": (
            lambda: [kernels._kmeans_1d_nb(t, 3, 100) for t in traces],
            lambda: [kernels.kmeans_1d_numpy(t, 3, 100) for t in traces]),
        "score candidates": (
            lambda: [kernels._score_candidates_nb(p, q, indptr, indices, bits, np.int64(1))
                     for p, q in zip(pools, queries)],
            lambda: [kernels.score_candidates_numpy(p, q, indptr, indices, bits, 1)
                     for p, q in zip(pools, queries)]),
    }
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for name, (fast, slow) in cases.items():
        a, b = fast(), slow()  # also warms up the JIT
        assert all(np.array_equal(x, y) for x, y in zip(a, b)), name
        tf, ts = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:<18} {tf * 1e3:>10.2f} {ts * 1e3:>10.2f} {ts / tf:>7.1f}x")


if __name__ == "__main__":
    main()
