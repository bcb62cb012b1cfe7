"""Time the compiled kernels against the numpy/Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from clamdet import _pykernels

try:
    from clamdet import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    for n, e in [(8, 32), (16, 32), (64, 32)]:
        a, p = rng.standard_normal((n, e)), rng.standard_normal((n, e))
        yield f"triplet_hinge N={n} e={e}", "triplet_hinge", (a, p, 1.0)
    for n in (1_000, 100_000):
        ia = rng.integers(0, 12, n).astype(np.int64)
        ib = ((ia + rng.integers(1, 12, n)) % 12).astype(np.int64)
        s = rng.integers(0, 2, n).astype(np.float64)
        yield f"elo_sequential matches={n}", "elo_sequential", (ia, ib, s, 12, 32.0, 1000.0)


def best_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python (us)':>12s} {'compiled (us)':>14s} {'speedup':>8s}")
    for label, name, call in cases(rng):
        tp = best_time(getattr(_pykernels, name), call, args.repeat)
        tc = best_time(getattr(_ckernels, name), call, args.repeat)
        print(f"{label:32s} {tp * 1e6:12.1f} {tc * 1e6:14.1f} {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
