"""Numba kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_backends.py [--quick]``. Each row times
one public entry point on both backends (numba after a warm-up call), checks
that the two results agree, and prints the speed-up.
"""

import argparse
import time

import numpy as np

from boundarywalk import expansion, fluctuation, pde, walk
from boundarywalk.model import IncrementDistribution, standard_problem


def timed(fn, repeat=1):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(quick):
    scale = 0.1 if quick else 1.0
    p = standard_problem("standard-normal")
    pe = standard_problem("centered-exponential")
    payoff = walk.payoff_functional(p.payoff)
    grid = pde.GridConfig(ny=512, nt=1024) if quick else pde.GridConfig(y_max=10, t_max=24, ny=1024, nt=2048)
    data = p.payoff.boundary_data(p.boundary)
    paths = int(20000 * scale)
    epochs = max(int(50000 * scale), 10**4)

    def crossing(problem):
        return lambda backend: walk.mc_expectation(payoff, 400, problem.distribution, problem.boundary,
                                                   paths, 1, backend=backend).mean

    yield "walk crossing, normal, n=400", crossing(p)
    yield "walk crossing, exponential, n=400", crossing(pe)
    yield "ladder heights, normal", lambda backend: fluctuation.estimate_rho(
        IncrementDistribution("standard-normal"), epochs, 2, 10**10, backend=backend).rho
    yield "visit diagnostics, normal, n=100", lambda backend: walk.visit_counts(
        100, p.distribution, p.boundary, paths, 3, backend=backend)["growth"].mean
    yield f"crank-nicolson {grid.ny}x{grid.nt}", lambda backend: pde.solve_value(
        p.boundary, data, grid, backend=backend).origin
    f0 = lambda t, x: np.exp(-np.asarray(t) / 2) + 0.0 * np.asarray(x)
    yield "convolution oracle, n=32", lambda backend: expansion.convolution_oracle(
        p.boundary, f0, p.distribution, 32, t_max=12.0, backend=backend).value


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args()

    print(f"{'kernel':40s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speed-up':>9s}  agree")
    print("-" * 80)
    for name, fn in cases(args.quick):
        fn("numba")  # compile
        t_nb, v_nb = timed(lambda: fn("numba"), repeat=2)
        t_np, v_np = timed(lambda: fn("numpy"))
        agree = np.isclose(v_nb, v_np, rtol=1e-10, atol=1e-12)
        print(f"{name:40s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.1f}x  {'yes' if agree else 'NO'}")


if __name__ == "__main__":
    main()
