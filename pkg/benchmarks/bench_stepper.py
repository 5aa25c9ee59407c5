"""Benchmark the implicit-midpoint kernels: compiled extension vs numpy loop.

Assembles the same static-potential step matrices the forward solver uses,
drives both backend kernels on identical inputs, and prints best-of-repeats
timings with the parity error between the two outputs.

Run from the repository root:

    python3 benchmarks/bench_stepper.py --sizes 31 63 127 --steps 2000
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mgtlab import available_backends, build_fracop, standard_grid
from mgtlab.forward import MGTParams


def assemble(n_interior: int, s: float, params: MGTParams, dt: float):
    grid = standard_grid(N=n_interior)
    op = build_fracop(grid, s)
    A = op.omega_block()
    n = grid.omega.size
    gamma = 0.5 * dt
    CAQ = params.c * A + np.diag(np.full(n, 0.2))
    G1 = gamma * CAQ
    G2 = gamma * params.b * A
    K = ((1.0 + gamma * params.alpha) * np.eye(n)
         + gamma**2 * params.b * A + gamma**3 * CAQ)
    return K, G1, G2, gamma, n


def drive(kernel, K, G1, G2, gamma, fmid, repeats: int) -> tuple[float, tuple]:
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = kernel(K, G1, G2, gamma, fmid)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[31, 63, 127])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--s", type=float, default=1.3)
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension unavailable; timing the numpy loop only")
    params = MGTParams(alpha=0.8, b=1.0, c=0.7)
    dt = 1e-3
    rng = np.random.default_rng(0)

    header = f"{'N':>5} {'n':>5} {'steps':>6} " + "".join(
        f"{name + ' [s]':>14}" for name in backends) + f"{'speedup':>10}{'parity':>12}"
    print(header)
    print("-" * len(header))
    for N in args.sizes:
        K, G1, G2, gamma, n = assemble(N, args.s, params, dt)
        fmid = rng.standard_normal((args.steps, n)) * 1e-3
        times = {}
        outs = {}
        for name, mod in backends.items():
            times[name], outs[name] = drive(mod.midpoint_loop, K, G1, G2,
                                            gamma, fmid, args.repeats)
        if len(outs) == 2:
            parity = max(float(np.max(np.abs(a - b)))
                         for a, b in zip(outs["python"], outs["cython"]))
            speedup = times["python"] / times["cython"]
        else:
            parity, speedup = 0.0, 1.0
        cells = "".join(f"{times[name]:>14.4f}" for name in backends)
        print(f"{N:>5} {n:>5} {args.steps:>6} {cells}{speedup:>10.2f}{parity:>12.2e}")


if __name__ == "__main__":
    main()
