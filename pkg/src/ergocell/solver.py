"""Monotone solvers for the discrete boundary value problems.

Three accelerators, all converging to the same fixed point of the monotone
scheme:

* ``plain``: damped pseudo-time iteration (uniform monotone step).
* ``nonlinear_gauss_seidel``: sweeps with exact nodal solves (compiled kernel
  when built, exact-root Jacobi fallback otherwise).
* ``policy_iteration``: Howard iteration over the finite linear policy family;
  available for linear operators and pure max- or min-type nonlinearities
  (hjb, pucci).  Genuine min-max (isaacs) always uses the monotone sweeps.

Dirichlet and truncation rows are pinned; each policy's linear system is an
M-matrix, so sparse direct solves preserve the comparison structure.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .grids import Grid, BoundaryData, GridError
from .kernels import PolicyTable, build_policy_table, KernelError
from .operators import OperatorSpec

ACCELERATORS = ("auto", "plain", "nonlinear_gauss_seidel", "policy_iteration")


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    tol_res: Optional[float] = None     # default 1e-8 * data scale
    max_iters: int = 200_000            # sweep budget for the iterative paths
    safety: float = 1.0                 # pseudo-time step fraction
    accelerator: str = "auto"
    max_policy_iters: int = 80
    warm_start_linear: bool = True      # start sweeps from a one-policy direct solve
    check_every: int = 50               # sweeps between residual checks

    def resolve_tol(self, data_scale: float) -> float:
        if self.tol_res is not None:
            return self.tol_res
        return 1e-8 * max(data_scale, 1.0)


class SharedLU:
    """Thread-shared LU factorizations; SuperLU solves are serialized by the
    lock since their reentrancy is not guaranteed."""

    def __init__(self):
        self.entries = {}
        self.lock = threading.Lock()

    def solve(self, key, factorize, rhs_builder):
        with self.lock:
            if key not in self.entries:
                self.entries[key] = factorize()
            lu, active, compact = self.entries[key]
            rhs = rhs_builder(active, compact)
            return lu.solve(rhs), active

    def __contains__(self, key):
        return key in self.entries


@dataclass
class GridSolution:
    values: np.ndarray            # flat over the grid box, NaN outside
    sup_residual: float
    iterations: int
    wall_time: float
    converged: bool
    accelerator: str
    tol: float

    def at_node(self, flat_idx: int) -> float:
        return float(self.values[flat_idx])


def _data_scale(bc: BoundaryData) -> float:
    vals = np.concatenate([a for a in (bc.dirichlet, bc.neumann, bc.truncation) if a.size])
    if vals.size == 0:
        return 1.0
    osc = float(vals.max() - vals.min())
    return osc if osc > 0 else max(float(np.abs(vals).max()), 1.0)


def _init_values(grid: Grid, bc: BoundaryData) -> np.ndarray:
    u = np.zeros(grid.n_nodes)
    u[grid.dirichlet_idx] = bc.dirichlet
    u[grid.truncation_idx] = bc.truncation
    if grid.dirichlet_idx.size or grid.truncation_idx.size:
        pinned = np.concatenate([bc.dirichlet, bc.truncation])
        u[grid.interior_idx] = float(np.mean(pinned)) if pinned.size else 0.0
    return u


def sup_residual(u: np.ndarray, tab: PolicyTable, bc: BoundaryData) -> float:
    g = tab.grid
    r = float(np.max(np.abs(kernels.interior_residual(u, tab)), initial=0.0))
    neu_rhs = g.neu_step * bc.neumann if g.neumann_idx.size else np.zeros(0)
    rn = kernels.neumann_residual(u, g, neu_rhs)
    if rn.size:
        r = max(r, float(np.max(np.abs(rn))))
    if g.dirichlet_idx.size:
        r = max(r, float(np.max(np.abs(u[g.dirichlet_idx] - bc.dirichlet))))
    if g.truncation_idx.size:
        r = max(r, float(np.max(np.abs(u[g.truncation_idx] - bc.truncation))))
    return r


def _policy_rhs(grid: Grid, bc: BoundaryData, compact: np.ndarray,
                size: int) -> np.ndarray:
    rhs = np.zeros(size)
    if grid.dirichlet_idx.size:
        rhs[compact[grid.dirichlet_idx]] = bc.dirichlet
    if grid.truncation_idx.size:
        rhs[compact[grid.truncation_idx]] = bc.truncation
    if grid.neumann_idx.size:
        rhs[compact[grid.neumann_idx]] = -grid.neu_step * bc.neumann
    return rhs


def _assemble_policy_system(tab: PolicyTable, bc: BoundaryData, policy: np.ndarray):
    g = tab.grid
    active = np.flatnonzero(g.classes != -1)
    compact = -np.ones(g.n_nodes, dtype=np.int64)
    compact[active] = np.arange(active.size)

    rows, cols, vals = [], [], []
    rhs = np.zeros(active.size)

    int_c = compact[g.interior_idx]
    diag = 2.0 * tab.sumW[policy]
    rows.append(int_c)
    cols.append(int_c)
    vals.append(diag)
    for k in range(tab.W.shape[1]):
        w = tab.W[policy, k]
        nz = np.flatnonzero(w)
        if nz.size == 0:
            continue
        for nb in (g.nbp[k], g.nbm[k]):
            rows.append(int_c[nz])
            cols.append(compact[nb[nz]])
            vals.append(-w[nz])

    for idx, data in ((g.dirichlet_idx, bc.dirichlet), (g.truncation_idx, bc.truncation)):
        if idx.size:
            c = compact[idx]
            rows.append(c)
            cols.append(c)
            vals.append(np.ones(idx.size))
            rhs[c] = data

    if g.neumann_idx.size:
        c = compact[g.neumann_idx]
        rows.append(c)
        cols.append(c)
        vals.append(np.ones(c.size))
        for j in range(g.neu_cols.shape[1]):
            w = g.neu_wts[:, j]
            nz = np.flatnonzero(w)
            if nz.size:
                rows.append(c[nz])
                cols.append(compact[g.neu_cols[nz, j]])
                vals.append(-w[nz])
        rhs[c] = -g.neu_step * bc.neumann

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(active.size, active.size))
    return A, rhs, active, compact


def _scatter(grid: Grid, active: np.ndarray, x: np.ndarray) -> np.ndarray:
    u = np.full(grid.n_nodes, np.nan)
    u[active] = x
    # NaN outside would poison stencil gathers through masked placeholder
    # entries, so keep a working copy with zeros there instead.
    w = np.zeros(grid.n_nodes)
    w[active] = x
    return w


def _finalize(grid: Grid, u: np.ndarray) -> np.ndarray:
    out = u.copy()
    out[grid.classes == -1] = np.nan
    return out


def solve(grid: Grid, op: OperatorSpec, bc: BoundaryData,
          cfg: Optional[SolverConfig] = None,
          u0: Optional[np.ndarray] = None,
          lu_cache: Optional[SharedLU] = None,
          table: Optional[PolicyTable] = None) -> GridSolution:
    """Solve F(D^2 u) = 0 with the given boundary rows to sup-residual tol."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    tab = table if table is not None else build_policy_table(grid, op)
    tol = cfg.resolve_tol(_data_scale(bc))
    acc = cfg.accelerator
    if acc == "auto":
        acc = "policy_iteration" if op.kind != "isaacs" else "nonlinear_gauss_seidel"
    if acc == "policy_iteration" and op.kind == "isaacs":
        raise SolverError("policy iteration is not offered for min-max (isaacs) operators")
    if acc not in ACCELERATORS:
        raise SolverError(f"unknown accelerator {acc!r}")

    neu_rhs = grid.neu_step * bc.neumann if grid.neumann_idx.size else np.zeros(0)
    u = u0.copy() if u0 is not None else _init_values(grid, bc)
    u[grid.dirichlet_idx] = bc.dirichlet
    u[grid.truncation_idx] = bc.truncation
    iters = 0

    if acc == "policy_iteration":
        last_policy = None
        for it in range(cfg.max_policy_iters):
            res = sup_residual(u, tab, bc)
            if res <= tol:
                return _done(grid, u, res, iters, t0, True, acc, tol)
            policy = kernels.active_policy(u, tab) if (it > 0 or u0 is not None) \
                else np.zeros(grid.interior_idx.size, dtype=np.int64)
            if last_policy is not None and np.array_equal(policy, last_policy):
                break  # stable policy but residual above tol: polish with sweeps
            last_policy = policy
            if tab.n_pol == 1 and lu_cache is not None:
                def factorize():
                    A, _, active, compact = _assemble_policy_system(tab, bc, policy)
                    return spla.splu(A.tocsc()), active, compact

                x, active = lu_cache.solve(
                    (id(grid), id(op)), factorize,
                    lambda active, compact: _policy_rhs(grid, bc, compact, active.size))
            else:
                A, rhs, active, compact = _assemble_policy_system(tab, bc, policy)
                x = spla.splu(A.tocsc()).solve(rhs)
            if np.any(np.isnan(x)):
                raise SolverError("NaN in policy solve")
            u = _scatter(grid, active, x)
            iters += 1
        # fall through to sweeps from the current iterate
        acc = "nonlinear_gauss_seidel"

    if acc == "plain":
        sweep = lambda n: kernels.plain_sweeps(u, tab, neu_rhs, n, cfg.safety)
    else:
        sweep = lambda n: kernels.gs_root_sweeps(u, tab, neu_rhs, n)
        if cfg.warm_start_linear and u0 is None and iters == 0:
            policy = np.zeros(grid.interior_idx.size, dtype=np.int64)
            A, rhs, active, _ = _assemble_policy_system(tab, bc, policy)
            x = spla.splu(A.tocsc()).solve(rhs)
            u = _scatter(grid, active, x)

    kernels.neumann_update(u, grid, neu_rhs)
    res = sup_residual(u, tab, bc)
    while res > tol:
        if iters >= cfg.max_iters:
            return _done(grid, u, res, iters, t0, False, acc, tol)
        n = min(cfg.check_every, cfg.max_iters - iters)
        sweep(n)
        iters += n
        if np.any(np.isnan(u)):
            raise SolverError("NaN detected during sweeps")
        res = sup_residual(u, tab, bc)
    return _done(grid, u, res, iters, t0, True, acc, tol)


def _done(grid, u, res, iters, t0, ok, acc, tol) -> GridSolution:
    return GridSolution(values=_finalize(grid, u), sup_residual=res,
                        iterations=iters, wall_time=time.perf_counter() - t0,
                        converged=ok, accelerator=acc, tol=tol)


# -- sup-convolution regularization ---------------------------------------

def regularize_data(psi: Callable, delta: float, sample_points: np.ndarray) -> Callable:
    """Lipschitz upper regularization psi_delta(y) = max_z [psi(z) - |y-z|/delta]
    by brute force over the given boundary sample points.

    The result is (1/delta)-Lipschitz, >= psi on the sample set, and
    nonincreasing as delta decreases.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    z = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if z.shape[0] == 1 and z.shape[1] > 1:
        z = z.T
    fz = np.asarray(psi(z), dtype=float).reshape(-1)

    def psi_delta(y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if y.shape[0] == 1 and y.shape[1] > 1 and z.shape[1] == 1:
            y = y.T
        dist = np.sqrt(((y[:, None, :] - z[None, :, :]) ** 2).sum(axis=2))
        out = np.max(fz[None, :] - dist / delta, axis=1)
        return out if out.size > 1 else float(out[0])

    return psi_delta


def regularize_lattice_field(sample_cell: Callable, delta: float, bound: float) -> Callable:
    """Exact sup-convolution for piecewise-constant lattice-cell data.

    sample_cell(j_array) -> cell values; the maximization over z reduces to a
    finite window of cells, since a cell further than delta * 2*bound away can
    never achieve the max."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    reach = int(np.ceil(delta * 2.0 * bound)) + 1

    def psi_delta(y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = y.shape[1]
        base = np.floor(y).astype(np.int64)
        grids = np.meshgrid(*([np.arange(-reach, reach + 1)] * n), indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=-1)
        cells = base[:, None, :] + offs[None, :, :]
        vals = np.asarray(sample_cell(cells))
        lo = cells.astype(float)
        gap = np.maximum(np.maximum(lo - y[:, None, :], y[:, None, :] - (lo + 1.0)), 0.0)
        dist = np.sqrt((gap ** 2).sum(axis=2))
        out = np.max(vals - dist / delta, axis=1)
        return out if out.size > 1 else float(out[0])

    return psi_delta
