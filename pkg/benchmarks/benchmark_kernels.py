"""Compiled vs pure-numpy sweep kernels on representative solves.

Run:  python benchmarks/benchmark_kernels.py

The compiled Gauss-Seidel kernel updates nodes in place (roughly half the
sweeps of Jacobi) with C inner loops; the numpy fallback runs vectorized
exact-root Jacobi.  Both converge to the same monotone fixed point; this
script reports wall time to the solver tolerance on a Pucci strip and an
Isaacs strip.
"""

import importlib
import os
import sys
import time

import numpy as np


def run_case(kernels, tag):
    from ergocell.grids import BoundaryData, build_box_grid
    from ergocell.operators import isaacs, pucci
    from ergocell.solver import SolverConfig, solve

    rng = np.random.default_rng(0)
    grid = build_box_grid(2, 16.0, 16.0, h=0.5)
    vals = rng.uniform(-1, 1, size=70)
    data = lambda p: vals[np.clip(np.floor(p[:, 0] + 16).astype(int), 0, 69)]
    bc = BoundaryData.from_callables(
        grid, dirichlet=data,
        truncation=lambda p: data(np.stack([np.clip(p[:, 0], -16, 16),
                                            np.zeros(len(p))], axis=1)))
    ops = [("pucci", pucci(0.5, 1.0)),
           ("isaacs", isaacs([[np.eye(2), np.diag([1.5, 1.0])],
                              [np.diag([1.0, 1.5]), 1.2 * np.eye(2)]], 1.0, 1.5))]
    # no direct-solve warm start: time the sweep kernels themselves
    cfg = SolverConfig(accelerator="nonlinear_gauss_seidel", tol_res=1e-7,
                       warm_start_linear=False)
    for name, op in ops:
        t0 = time.perf_counter()
        sol = solve(grid, op, bc, cfg)
        dt = time.perf_counter() - t0
        print(f"  {tag:>7s} {name:>7s}: {dt:7.2f}s  sweeps={sol.iterations:>6d} "
              f"res={sol.sup_residual:.1e} value[center]={sol.values[grid.n_nodes // 2]:+.6f}")


def main():
    print("sweep-kernel benchmark (nonlinear Gauss-Seidel accelerator path)")
    import ergocell.kernels as kernels
    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the numpy fallback is available")
    else:
        run_case(kernels, "cython")
    os.environ["ERGOCELL_FORCE_NUMPY"] = "1"
    for mod in list(sys.modules):
        if mod.startswith("ergocell"):
            del sys.modules[mod]
    import ergocell.kernels as kernels_np
    assert kernels_np.BACKEND == "numpy"
    run_case(kernels_np, "numpy")


if __name__ == "__main__":
    main()
