"""Compiled vs numpy fallback timings for the two hot loops.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel and problem size with the best-of-``repeat``
wall time of each backend, their ratio, and the max abs difference.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from mlab import _fallback
from mlab.nse import lattice

try:
    from mlab import _kernels
except ImportError:  # extension not built
    _kernels = None


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def damped_case(n_paths: int, n_steps: int):
    gen = np.random.default_rng(0)
    x0 = np.ones(n_paths)
    dw = gen.standard_normal((n_paths, n_steps)) * 0.1
    args = (x0, dw, 0.01, 0.25, 0.05, 1.0)
    return "damped_em", f"{n_paths}x{n_steps}", args


def triad_case(N: int, n: int):
    lat = lattice(N)
    kk, pp, qq, qv = lat.triads
    gen = np.random.default_rng(1)
    u = gen.standard_normal((n, lat.M, 3)) + 1j * gen.standard_normal((n, lat.M, 3))
    return "triad_convolution", f"N={N} n={n}", (u, u, kk, pp, qq, qv, lat.H)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cases = [damped_case(n, m) for n, m in [(200, 2000), (1000, 10_000)]]
    cases += [triad_case(N, n) for N, n in [(2, 100), (2, 2000), (4, 20)]]
    print(f"{'kernel':<18} {'size':<14} {'python s':>10} {'compiled s':>11} {'speedup':>8} {'max diff':>9}")
    for name, size, a in cases:
        py = getattr(_fallback, name)
        t_py = _time(lambda: py(*a), args.repeat)
        if _kernels is None:
            print(f"{name:<18} {size:<14} {t_py:>10.4f} {'n/a':>11}")
            continue
        cy = getattr(_kernels, name)
        t_cy = _time(lambda: cy(*a), args.repeat)
        diff = float(np.max(np.abs(py(*a) - cy(*a))))
        print(f"{name:<18} {size:<14} {t_py:>10.4f} {t_cy:>11.4f} {t_py / t_cy:>7.1f}x {diff:>9.1e}")


if __name__ == "__main__":
    main()
