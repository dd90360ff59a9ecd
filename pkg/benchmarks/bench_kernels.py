"""Compare the compiled and pure-Python Dykstra kernels.

Runs cold projections (zero corrections, fixed sweep budget) on random
box-and-row sets and on one microgrid feasible set, checks that both
kernels return the same point and prints the median time per call.

    python benchmarks/bench_kernels.py [--repeat 5] [--sweeps 200]
"""

import argparse
import statistics
import time

import numpy as np

from clustertrack import kernels, power
from clustertrack.constraints import BoxSet, FeasibleSet, Halfspace, Hyperplane


def random_set(rng, dim, n_eq, n_ineq):
    lo = rng.uniform(-2, 0, dim)
    hi = lo + rng.uniform(0.5, 3, dim)
    inner = rng.uniform(lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo))
    members = [BoxSet(lo, hi)]
    for _ in range(n_eq):
        a = rng.normal(size=dim)
        members.append(Hyperplane(a, a @ inner))
    for _ in range(n_ineq):
        a = rng.normal(size=dim)
        members.append(Halfspace(a, a @ inner + rng.uniform(0, 1)))
    return FeasibleSet(members, certify=False)


def microgrid_set():
    spec = power.MicrogridSpec(
        [power.GeneratorParams(2.5, 1.5, 1.0, 0.0, 8.0) for _ in range(3)],
        [power.BatteryParams(2.5, 0.5, 0.1, -5.0, 5.0, 20.0, 10.0) for _ in range(7)],
        power.default_demand_profile(24, 95.0))
    return power.cluster_set(spec, certify=False)[0]


def time_kernel(fn, fs, u, sweeps, repeat):
    times, out = [], None
    for _ in range(repeat):
        lam, corr = np.zeros(fs.n_rows), np.zeros(fs.dim)
        t0 = time.perf_counter()
        out = fn(u, fs.lower, fs.upper, fs._indptr, fs._indices, fs._data, fs._rhs,
                 fs._is_eq, fs._inv_sq, lam, corr, 0.0, sweeps)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sweeps", type=int, default=200)
    args = ap.parse_args(argv)
    if kernels.dykstra_compiled is None:
        print("compiled kernel unavailable; build the extension first (pip install -e .)")
        return 1

    rng = np.random.default_rng(0)
    cases = [("dim 20, 5 rows", random_set(rng, 20, 2, 3)),
             ("dim 100, 30 rows", random_set(rng, 100, 10, 20)),
             ("dim 400, 120 rows", random_set(rng, 400, 40, 80)),
             ("microgrid T=24, 3 gen + 7 bat", microgrid_set())]
    print(f"{'case':32s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, fs in cases:
        u = rng.normal(scale=5.0, size=fs.dim)
        tp, xp = time_kernel(kernels.dykstra_python, fs, u, args.sweeps, args.repeat)
        tc, xc = time_kernel(kernels.dykstra_compiled, fs, u, args.sweeps, args.repeat)
        print(f"{name:32s} {1e3 * tp:10.2f} {1e3 * tc:10.3f} {tp / tc:8.1f}x {np.max(np.abs(xp - xc)):11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
