"""Time the compiled and numpy kernel backends on representative inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel with the best wall time of each backend and the
speedup. The compiled column is skipped when the extension is not built.
"""
import argparse
import timeit

import numpy as np

from dpcdr import _kernels_py, kernels

try:
    from dpcdr import _kernels as _kernels_ext
except ImportError:
    _kernels_ext = None


def cases(rng):
    # Dirac trajectory over t in [0, 20] at h = 1e-3
    yield "dirac_rk4", lambda impl: kernels.dirac_rk4(0.3, -0.8, np.zeros(1), 2.0, 1e-3, 20_000, impl=impl)

    # first critic layer at batch 128: 256 stacked rows, 200 items + 32 embedding inputs, width 64
    a = rng.random((256, 232))
    d = rng.normal(size=(256, 64))
    groups = np.concatenate([np.arange(128), np.arange(128)])
    yield "grouped_sq_norms", lambda impl: kernels.grouped_sq_norms(a, d, groups, 128, 1.0, impl=impl)

    # leave-one-out ranking for 2000 users x 100 candidates, with ties
    scores = rng.integers(0, 20, size=(2000, 100)).astype(float)
    items = np.stack([rng.permutation(1000)[:100] for _ in range(2000)])
    pos = np.zeros(2000, dtype=np.int64)
    yield "loo_ranks", lambda impl: kernels.loo_ranks(scores, pos, items, impl=impl)


def best_time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':<18}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for name, run in cases(rng):
        t_py = best_time(lambda: run(_kernels_py), args.repeat)
        if _kernels_ext is None:
            print(f"{name:<18}{t_py * 1e3:>14.3f}{'n/a':>14}{'':>10}")
            continue
        t_c = best_time(lambda: run(_kernels_ext), args.repeat)
        print(f"{name:<18}{t_py * 1e3:>14.3f}{t_c * 1e3:>14.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
