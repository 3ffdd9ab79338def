"""Compare the compiled and numpy Monte Carlo kernels.

    python benchmarks/bench_kernels.py [--trials N] [--repeat R]

Prints one CSV row per (backend, beacon count) with the best wall time
and throughput, then the maximum disagreement between the two backends.
"""

import argparse
import sys
import time

import numpy as np

from beacontrace.kernels import _pykernels
from beacontrace.kernels._rng import derive_trial_seeds

try:
    from beacontrace.kernels import _ckernels
except ImportError:
    _ckernels = None

ARGS = dict(width=10.0, height=10.0, rss_1m=-60.0, eta=2.0, sigma=2.0, min_d=0.1,
            floor_dbm=-100.0, packets=10)


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--counts", default="1,5,10")
    args = p.parse_args(argv)

    backends = [("python", _pykernels)]
    if _ckernels is None:
        print("# compiled kernel not built; timing the numpy fallback only", file=sys.stderr)
    else:
        backends.append(("cython", _ckernels))

    print("backend,n_beacons,trials,best_s,trials_per_s")
    worst = 0.0
    for n in (int(c) for c in args.counts.split(",")):
        seeds = derive_trial_seeds(0, n, np.arange(args.trials))
        results = {}
        for name, impl in backends:
            dt = best_time(lambda: impl.run_batch(seeds, n_beacons=n, **ARGS), args.repeat)
            results[name] = impl.run_batch(seeds, n_beacons=n, **ARGS)[1]
            print(f"{name},{n},{args.trials},{dt:.4f},{args.trials / dt:.0f}")
        if len(results) == 2:
            a, b = results["python"], results["cython"]
            same_nan = np.array_equal(np.isnan(a), np.isnan(b))
            ok = ~np.isnan(a)
            worst = max(worst, float(np.max(np.abs(a[ok] - b[ok]), initial=0.0)))
            if not same_nan:
                print("# backends disagree on no-estimate trials", file=sys.stderr)
                return 1
    if _ckernels is not None:
        print(f"# max |python - cython| estimate difference: {worst:.3e} m", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
