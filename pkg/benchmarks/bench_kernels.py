"""Compare the compiled and numpy kernel backends on featurization-sized inputs.

    python3 benchmarks/bench_kernels.py [--queries 1000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from meaad import _kernels_py

try:
    from meaad import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def workloads(rng, queries, gallery, k, n_experts):
    sims = rng.uniform(-1, 1, (queries, gallery))
    ids = rng.permutation(gallery).astype(np.int64)
    supports = np.stack([
        np.stack([rng.choice(3 * k, size=k, replace=False) for _ in range(n_experts)]) for _ in range(queries)
    ]).astype(np.int64)
    return {
        "topk_rows": lambda mod: mod.topk_rows(sims, ids, k),
        "membership_counts": lambda mod: mod.membership_counts(supports),
        "common_counts": lambda mod: mod.common_counts(supports),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--queries", type=int, default=1000)
    ap.add_argument("--gallery", type=int, default=1000)
    ap.add_argument("--k", type=int, default=15)
    ap.add_argument("--experts", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    backends = [("python", _kernels_py)] + ([("cython", _kernels_c)] if _kernels_c else [])
    print(f"queries={args.queries} gallery={args.gallery} k={args.k} experts={args.experts}")
    print(f"{'kernel':20s}" + "".join(f"{name:>12s}" for name, _ in backends) + ("     speedup" if _kernels_c else ""))
    for name, fn in workloads(rng, args.queries, args.gallery, args.k, args.experts).items():
        # identical results before timing anything
        if _kernels_c:
            for a, b in zip(np.atleast_1d(fn(_kernels_py)), np.atleast_1d(fn(_kernels_c))):
                np.testing.assert_array_equal(a, b)
        times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for _, mod in backends]
        row = f"{name:20s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)
    if _kernels_c is None:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
