"""Numba vs numpy timings for the hot kernels.

    python benchmarks/bench_backends.py [--sizes 16,32,64] [--repeat 3]

Both backends run in one process; the numba path is warmed up first so
compile time is excluded. Results are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from ntklab import _accel
from ntklab.activations import parse_activation
from ntklab.gauss import expectation_matrix
from ntklab.linalg import eigh, pivoted_cholesky


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def run_case(label, make, repeat):
    times, outs = {}, {}
    for backend in ("numba", "numpy"):
        _accel.USE_NUMBA = backend == "numba"
        fn = make(backend)
        outs[backend] = fn()
        times[backend] = best_of(fn, repeat)
    a, b = outs["numba"], outs["numpy"]
    diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
    speedup = times["numpy"] / times["numba"]
    print(f"{label:<26} numba {times['numba'] * 1e3:9.2f} ms   numpy {times['numpy'] * 1e3:9.2f} ms   "
          f"speedup {speedup:6.2f}x   rel diff {diff:.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    sizes = [int(s) for s in args.sizes.split(",")]
    original = _accel.USE_NUMBA
    rng = np.random.default_rng(0)
    print(f"threads: {_accel.numba.get_num_threads()}")
    for name in ("relu", "tanh", "erf", "poly:0,1,0.5"):
        g = parse_activation(name).value
        for n in sizes:
            B = rng.normal(size=(n, 3))
            K = B @ B.T / 3 + 0.5
            run_case(f"E[s s] {name} n={n}", lambda be: (lambda: expectation_matrix(K, g, g)), args.repeat)
    for n in [4 * s for s in sizes]:
        M = rng.normal(size=(n, n))
        M = M + M.T
        run_case(f"eigh n={n}", lambda be: (lambda: eigh(M, backend=be)[0]), args.repeat)
        P = M @ M.T
        run_case(f"pivoted_cholesky n={n}", lambda be: (lambda: pivoted_cholesky(P, backend=be)[0]), args.repeat)
    _accel.USE_NUMBA = original


if __name__ == "__main__":
    main()
