"""Compare the compiled and pure-numpy backward-induction kernels.

Runs the same backward solve with each available backend, reports wall
time, and checks that the two value grids agree.

    python benchmarks/bench_kernels.py [--grid 21] [--dt-dp 0.005] [--horizon 2.0]
"""

import argparse
import time

import numpy as np

from qrisk.dynprog import kernels
from qrisk.dynprog.grid import DPConfig, RISK_NEUTRAL, RISK_SENSITIVE
from qrisk.dynprog.solver import backward_solve
from qrisk.model import TwoLevelParams


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=21, help="nodes per axis")
    ap.add_argument("--dt-dp", type=float, default=5e-3)
    ap.add_argument("--horizon", type=float, default=2.0)
    ap.add_argument("--n-u", type=int, default=17)
    args = ap.parse_args()

    p = TwoLevelParams(T=args.horizon)
    cfg = dict(n_x=args.grid, n_y=args.grid, n_z=args.grid, dt_dp=args.dt_dp, n_u=args.n_u)
    print(f"backends available: {sorted(kernels.BACKENDS)} (default {kernels.DEFAULT_BACKEND})")
    print(f"grid {args.grid}^3, dt_dp={args.dt_dp}, T={args.horizon}, control grid {args.n_u}x{args.n_u}")
    for mode in (RISK_SENSITIVE, RISK_NEUTRAL):
        grids = {}
        for name in sorted(kernels.BACKENDS):
            t0 = time.perf_counter()
            vg, _ = backward_solve(p, DPConfig(backend=name, **cfg), mode)
            elapsed = time.perf_counter() - t0
            grids[name] = vg.values[0]
            print(f"  {mode} {name:>8}: {elapsed:7.2f} s   V(up, t=0) = {float(vg.value(0, 0, 1.0)):.10f}")
        if len(grids) == 2:
            diff = float(np.max(np.abs(grids["compiled"] - grids["python"])))
            print(f"  {mode} max |compiled - python| on the t=0 slice: {diff:.3e}")


if __name__ == "__main__":
    main()
