"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--N 2000] [--n 100] [--moves 10] [--repeat 5]

Prints the best-of-``repeat`` wall time per call and the speed-up.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dpdtune import _backend


def make_problem(N, n, seed=0):
    rng = np.random.default_rng(seed)
    X = np.ones((n, 1))
    y = rng.normal(1.0, 1.0, n)
    theta = np.column_stack([rng.normal(1.0, 0.1, N), rng.uniform(0.8, 1.2, N)])
    return np.ascontiguousarray(theta), y, X, rng


def cases(k, N, n, moves):
    theta, y, X, rng = make_problem(N, n)
    w = np.full(N, 1.0 / N)
    steps = rng.normal(0, 0.05, (moves, N, 2))
    logu = np.log(rng.random((moves, N)))
    lower, upper = np.array([-np.inf, 0.0]), np.array([np.inf, np.inf])
    lp0 = k.log_target(theta, y, X, 0.3)

    def mh():
        k.mh_chain(theta.copy(), lp0.copy(), steps, logu, y, X, 0.3, 1.0, lower, upper)

    return {
        "log_target": lambda: k.log_target(theta, y, X, 0.3),
        "hscore_stats": lambda: k.hscore_stats(theta, w, y, X, 0.3),
        f"mh_chain x{moves}": mh,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, default=2000, help="particles")
    p.add_argument("--n", type=int, default=100, help="observations")
    p.add_argument("--moves", type=int, default=10, help="MH moves per mh_chain call")
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    backends = _backend.available()
    results = {}
    for name in backends:
        k = _backend._AVAILABLE[name]
        for label, fn in cases(k, args.N, args.n, args.moves).items():
            fn()  # warm-up
            results[(name, label)] = min(timeit.repeat(fn, number=1, repeat=args.repeat))

    labels = list(dict.fromkeys(label for _, label in results))
    print(f"N={args.N} n={args.n}; best of {args.repeat}, milliseconds per call")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends)
          + ("   speed-up" if len(backends) == 2 else ""))
    for label in labels:
        times = [results[(b, label)] for b in backends]
        line = f"{label:<16}" + "".join(f"{1e3 * t:12.2f}" for t in times)
        if len(backends) == 2:
            line += f"{results[('python', label)] / results[('cython', label)]:10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
