"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--n 720] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from adaptive_exploration import _kernels


def cases(n, rng):
    sims = rng.uniform(-1, 1, (n, n))
    np.fill_diagonal(sims, 1.0)
    logits = rng.normal(size=(128, n)) * 10
    counts = rng.integers(1, 30, 128)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = rng.integers(0, n, indptr[-1])
    weights = rng.uniform(size=128)
    order = np.argsort(-sims[:150], axis=1, kind="stable")
    q_ids, g_ids = rng.integers(0, 40, 150), rng.integers(0, 40, n)
    q_cams, g_cams = rng.integers(0, 6, 150), rng.integers(0, 6, n)
    return {
        "threshold_select": lambda impl: _kernels.threshold_select(sims, 0.35, impl),
        "topk_select": lambda impl: _kernels.topk_select(sims, 10, impl),
        "sparse_xent": lambda impl: _kernels.sparse_xent(logits, indptr, indices, weights, impl),
        "rank_scan": lambda impl: _kernels.rank_scan(order, q_ids, q_cams, g_ids, g_cams, True, impl),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=720)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = _kernels.BACKENDS
    if "cython" not in backends:
        print("compiled kernels unavailable; timing the fallback only")
    print(f"{'kernel':<18}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for name, fn in cases(args.n, np.random.default_rng(0)).items():
        ms = {b: 1e3 * min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
              for b, impl in backends.items()}
        ratio = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{name:<18}" + "".join(f"{ms[b]:>14.3f}" for b in backends) + f"{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
