#!/usr/bin/env python3
"""Benchmark the Monte Carlo trajectory kernels: numba vs pure numpy.

The numba path is the default; NMBATH_BACKEND=numpy selects the fallback.
Here both are timed head to head through the same event streams.

Usage: python benchmarks/bench_mc.py [trajectories]
"""

import sys
import time

import numpy as np

import nmbath as nm
from nmbath import _mc


def timed(label, fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    print(f"{label:<42s} {best:8.3f} s")
    return out, best


def main():
    n_traj = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    tg = nm.time_grid(6.0, 400)
    rho_y = 0.5 * (np.eye(2, dtype=complex) + nm.SIGMA_Y)

    cases = {
        "dephasing two-state (interaction)": nm.dephasing_model(
            nm.two_state_ensemble(0.5, 2.0, 1.0)),
        "sigma_x jumps + precession (schroedinger)": nm.ModelSpec(
            0.5 * nm.SIGMA_Z, (nm.SIGMA_X,),
            nm.rate_ensemble([1.0, 2.0], [0.5, 0.5]), "schroedinger"),
    }

    print(f"trajectories = {n_traj}, grid points = {tg.size}, "
          f"default backend = {_mc.active_backend()}")
    for name, model in cases.items():
        print(f"\n{name}")
        for scheme in ("frozen_rate", "renewal"):
            cfg = nm.MCConfig(n_traj, seed=12345, scheme=scheme)
            results = {}
            times = {}
            for backend in ("numba", "numpy"):
                if backend == "numba" and not _mc.HAVE_NUMBA:
                    print(f"  {scheme}/{backend:<6s}  numba unavailable, skipped")
                    continue
                # warm up compilation outside the timed region
                nm.mc_trajectories(model, rho_y, tg[:3], nm.MCConfig(64, 1, scheme),
                                   backend=backend)
                res, dt = timed(
                    f"  {scheme} [{backend}]",
                    lambda b=backend: nm.mc_trajectories(model, rho_y, tg, cfg, backend=b))
                results[backend] = res
                times[backend] = dt
            if len(results) == 2:
                drift = np.max(np.abs(results["numba"].states - results["numpy"].states))
                print(f"  backend agreement {drift:.2e}, "
                      f"speedup x{times['numpy'] / times['numba']:.1f}")


if __name__ == "__main__":
    main()
