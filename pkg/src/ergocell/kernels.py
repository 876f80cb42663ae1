"""Residual/sweep kernels shared by the solvers.

Every supported operator is a two-level min/max of finite linear monotone
stencil policies; a policy is a set of direction weights w_d >= 0 with

    residual_p(x) = (1/h^2) * sum_d w_d * (2 u(x) - u(x+h v_d) - u(x-h v_d)).

The nodal root of each policy is a convex combination of neighbor values, so
Jacobi / Gauss-Seidel sweeps with exact local solves are monotone without a
CFL parameter.  A compiled Gauss-Seidel kernel (Cython) is used when the
extension built; the pure-numpy fallback runs exact-root Jacobi sweeps, which
converge to the same fixed point.  ``BACKEND`` records the choice at import.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .grids import Grid, GridError
from .operators import OperatorSpec, OperatorError

import os

if os.environ.get("ERGOCELL_FORCE_NUMPY"):
    _ext = None
    BACKEND = "numpy"
else:
    try:  # compiled extension is optional
        from . import _sweep as _ext
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build environment
        _ext = None
        BACKEND = "numpy"

NONE, MIN, MAX = 0, 1, 2
_OPS = {NONE: None, MIN: np.minimum, MAX: np.maximum}


class KernelError(ValueError):
    pass


def _decompose_matrix(A: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Weights w with tr(A M) = sum_k w_k v_k^T M v_k over stencil directions.

    Uses axes for the (diagonally dominant) diagonal part and +/- diagonal
    directions for the off-diagonal entries; raises when A is not diagonally
    dominant or the stencil lacks a needed diagonal."""
    d = A.shape[0]
    w = np.zeros(len(dirs))
    lookup = {tuple(v): k for k, v in enumerate(dirs.tolist())}
    for i in range(d):
        wi = A[i, i] - sum(abs(A[i, j]) for j in range(d) if j != i)
        if wi < -1e-12:
            raise KernelError("matrix is not diagonally dominant; monotone stencil unavailable")
        key = tuple(int(i == k) for k in range(d))
        w[lookup[key]] += max(wi, 0.0)
    for i in range(d):
        for j in range(i + 1, d):
            if A[i, j] == 0.0:
                continue
            s = 1 if A[i, j] > 0 else -1
            v = np.zeros(d, dtype=int)
            v[i], v[j] = 1, s
            for cand in (tuple(v), tuple(-v)):
                if cand in lookup:
                    w[lookup[cand]] += abs(A[i, j])
                    break
            else:
                raise KernelError("stencil lacks the diagonal direction for an off-diagonal entry")
    return w


def _pucci_policies(lam: float, Lam: float, dirs: np.ndarray,
                    frames: Tuple[Tuple[int, ...], ...]) -> Tuple[np.ndarray, np.ndarray]:
    """All frame x {lam, Lam}^d coefficient policies of the extremal operator,
    as decomposition weights; returns (W, frame_of_policy)."""
    inv_len2 = 1.0 / (dirs.astype(float) ** 2).sum(axis=1)
    rows, frame_of = [], []
    for fi, fr in enumerate(frames):
        k = len(fr)
        for combo in range(2 ** k):
            w = np.zeros(len(dirs))
            for pos, dir_idx in enumerate(fr):
                a = Lam if (combo >> pos) & 1 else lam
                w[dir_idx] = a * inv_len2[dir_idx]
            rows.append(w)
            frame_of.append(fi)
    return np.array(rows), np.array(frame_of, dtype=np.int64)


@dataclass
class PolicyTable:
    """Flattened policy/reduction tables for one (grid, operator) pair."""

    W: np.ndarray                 # (n_pol, n_dirs) decomposition weights
    pol_avail: np.ndarray         # (n_pol, n_int) bool
    group_bounds: np.ndarray      # (n_groups + 1,) policy offsets
    inner_op: int                 # reduce within a group, on residuals
    outer_op: int                 # reduce across groups, on residuals
    grid: Grid

    def __post_init__(self):
        self.sumW = self.W.sum(axis=1)
        if np.any(self.sumW <= 0):
            raise KernelError("policy with nonpositive total weight")
        # flattened sparse layout for the compiled kernel
        nz = [np.flatnonzero(self.W[p]) for p in range(self.W.shape[0])]
        self.nnz_bounds = np.concatenate([[0], np.cumsum([len(z) for z in nz])]).astype(np.int64)
        self.nnz_dir = np.concatenate(nz).astype(np.int64) if nz else np.zeros(0, np.int64)
        self.nnz_w = np.concatenate([self.W[p, z] for p, z in enumerate(nz)]) if nz else np.zeros(0)

    @property
    def n_pol(self) -> int:
        return self.W.shape[0]


def build_policy_table(grid: Grid, op: OperatorSpec) -> PolicyTable:
    dirs, frames = grid.dirs, grid.frames
    n_int = grid.interior_idx.size
    kind = op.kind
    if kind == "transformed":
        base = op.base
        if base.kind not in ("pucci_plus", "pucci_minus"):
            raise KernelError("transformed wrapper around a non-pucci base")
        Wp, frame_of = _pucci_policies(base.lam, base.Lam, dirs, frames)
        Tinv = np.linalg.inv(op.T)
        rows = []
        for p in range(Wp.shape[0]):
            A = np.zeros((grid.d, grid.d))
            for k in np.flatnonzero(Wp[p]):
                v = dirs[k].astype(float)
                A += Wp[p, k] * np.outer(v, v)
            rows.append(_decompose_matrix(Tinv @ A @ Tinv.T, dirs))
        W = np.array(rows)
        avail = grid.frame_avail[frame_of]
        inner = MIN if base.kind == "pucci_plus" else MAX
        return PolicyTable(W, avail, np.array([0, W.shape[0]]), inner, NONE, grid)

    if kind in ("pucci_plus", "pucci_minus"):
        W, frame_of = _pucci_policies(op.lam, op.Lam, dirs, frames)
        avail = grid.frame_avail[frame_of]
        inner = MIN if kind == "pucci_plus" else MAX
        return PolicyTable(W, avail, np.array([0, W.shape[0]]), inner, NONE, grid)

    if kind in ("linear_trace", "hjb"):
        mats = op.family()
        W = np.array([_decompose_matrix(A, dirs) for A in mats])
        avail = _weights_avail(W, grid)
        inner = NONE if len(mats) == 1 else MAX
        return PolicyTable(W, avail, np.array([0, W.shape[0]]), inner, NONE, grid)

    if kind == "isaacs":
        rows, bounds = [], [0]
        for fam in op.matrix_table:
            rows.extend(_decompose_matrix(A, dirs) for A in fam)
            bounds.append(len(rows))
        W = np.array(rows)
        avail = _weights_avail(W, grid)
        return PolicyTable(W, avail, np.array(bounds), MAX, MIN, grid)

    raise KernelError(kind)


def _weights_avail(W: np.ndarray, grid: Grid) -> np.ndarray:
    avail = np.ones((W.shape[0], grid.interior_idx.size), dtype=bool)
    for p in range(W.shape[0]):
        for k in np.flatnonzero(W[p]):
            avail[p] &= grid.dir_avail[k]
    if not avail.any(axis=0).all():
        raise KernelError("a node has no available stencil policy")
    return avail


def _policy_values(u: np.ndarray, tab: PolicyTable, want_roots: bool):
    g = tab.grid
    s = u[g.nbp] + u[g.nbm]                        # (n_dirs, n_int)
    WS = tab.W @ s                                 # (n_pol, n_int)
    if want_roots:
        return WS / (2.0 * tab.sumW[:, None])
    u_int = u[g.interior_idx]
    return (2.0 * u_int[None, :] * tab.sumW[:, None] - WS) / g.h ** 2


def _reduce(vals: np.ndarray, tab: PolicyTable, inner: int, outer: int) -> np.ndarray:
    fill = {MIN: np.inf, MAX: -np.inf, NONE: 0.0}
    masked = np.where(tab.pol_avail, vals, fill[inner if inner != NONE else outer])
    gb = tab.group_bounds
    groups = []
    for gi in range(len(gb) - 1):
        block = masked[gb[gi]:gb[gi + 1]]
        if inner == MIN:
            groups.append(block.min(axis=0))
        elif inner == MAX:
            groups.append(block.max(axis=0))
        else:
            groups.append(block[0])
    stack = np.stack(groups, axis=0)
    if outer == MIN:
        return stack.min(axis=0)
    if outer == MAX:
        return stack.max(axis=0)
    return stack[0]


def interior_residual(u: np.ndarray, tab: PolicyTable) -> np.ndarray:
    """Residual on interior nodes, order matching grid.interior_idx."""
    vals = _policy_values(u, tab, want_roots=False)
    return _reduce(vals, tab, tab.inner_op, tab.outer_op)


def _swap(opcode: int) -> int:
    return {NONE: NONE, MIN: MAX, MAX: MIN}[opcode]


def interior_roots(u: np.ndarray, tab: PolicyTable) -> np.ndarray:
    """Exact nodal solves: value at each node making its residual zero given
    current neighbors.  Reduction ops swap relative to residuals because every
    policy residual is increasing in u(x)."""
    vals = _policy_values(u, tab, want_roots=True)
    return _reduce(vals, tab, _swap(tab.inner_op), _swap(tab.outer_op))


def active_policy(u: np.ndarray, tab: PolicyTable) -> np.ndarray:
    """Index of the policy achieving the residual reduction at each node."""
    vals = _policy_values(u, tab, want_roots=False)
    fill_in = {MIN: np.inf, MAX: -np.inf, NONE: np.inf}[tab.inner_op]
    masked = np.where(tab.pol_avail, vals, fill_in)
    gb = tab.group_bounds
    if len(gb) == 2:
        if tab.inner_op == MAX:
            return np.argmax(masked, axis=0)
        return np.argmin(masked, axis=0)
    # two-level: arg within each group, then arg across groups
    n_int = vals.shape[1]
    group_arg = np.empty((len(gb) - 1, n_int), dtype=np.int64)
    group_val = np.empty((len(gb) - 1, n_int))
    for gi in range(len(gb) - 1):
        block = masked[gb[gi]:gb[gi + 1]]
        arg = np.argmax(block, axis=0) if tab.inner_op == MAX else np.argmin(block, axis=0)
        group_arg[gi] = arg + gb[gi]
        group_val[gi] = np.take_along_axis(block, arg[None, :], axis=0)[0]
    outer = np.argmin(group_val, axis=0) if tab.outer_op == MIN else np.argmax(group_val, axis=0)
    return np.take_along_axis(group_arg, outer[None, :], axis=0)[0]


def neumann_update(u: np.ndarray, grid: Grid, neu_rhs: np.ndarray) -> None:
    """In-place exact solve of the Neumann rows: u = interp(u) - t*psi."""
    if grid.neumann_idx.size == 0:
        return
    interp = np.einsum("nk,nk->n", grid.neu_wts, u[np.maximum(grid.neu_cols, 0)])
    u[grid.neumann_idx] = interp - neu_rhs


def neumann_residual(u: np.ndarray, grid: Grid, neu_rhs: np.ndarray) -> np.ndarray:
    if grid.neumann_idx.size == 0:
        return np.zeros(0)
    interp = np.einsum("nk,nk->n", grid.neu_wts, u[np.maximum(grid.neu_cols, 0)])
    return (u[grid.neumann_idx] - interp + neu_rhs) / grid.neu_step


def jacobi_root_sweeps(u: np.ndarray, tab: PolicyTable, neu_rhs: np.ndarray,
                       n_sweeps: int) -> float:
    """Exact-root Jacobi sweeps (numpy reference / fallback backend)."""
    g = tab.grid
    change = 0.0
    for _ in range(n_sweeps):
        roots = interior_roots(u, tab)
        change = float(np.max(np.abs(roots - u[g.interior_idx]), initial=0.0))
        u[g.interior_idx] = roots
        neumann_update(u, g, neu_rhs)
    return change


def gs_root_sweeps(u: np.ndarray, tab: PolicyTable, neu_rhs: np.ndarray,
                   n_sweeps: int) -> float:
    """Gauss-Seidel sweeps with exact local solves; compiled when available."""
    g = tab.grid
    if _ext is not None:
        return _ext.gs_sweep(
            u, g.nbp, g.nbm, tab.nnz_bounds, tab.nnz_dir, tab.nnz_w,
            2.0 * tab.sumW, tab.pol_avail.astype(np.uint8),
            tab.group_bounds.astype(np.int64), tab.inner_op, tab.outer_op,
            g.interior_idx,
            g.neumann_idx, np.maximum(g.neu_cols, 0), g.neu_wts,
            np.asarray(neu_rhs, dtype=float), int(n_sweeps))
    return jacobi_root_sweeps(u, tab, neu_rhs, n_sweeps)


def plain_sweeps(u: np.ndarray, tab: PolicyTable, neu_rhs: np.ndarray,
                 n_sweeps: int, safety: float) -> float:
    """Damped pseudo-time iteration u <- u - tau * residual with the uniform
    monotone step tau = safety * h^2 / (2 * max_p sum_d w_d)."""
    g = tab.grid
    tau = safety * g.h ** 2 / (2.0 * tab.sumW.max())
    change = 0.0
    for _ in range(n_sweeps):
        res = interior_residual(u, tab)
        step = tau * res
        change = float(np.max(np.abs(step), initial=0.0))
        u[g.interior_idx] -= step
        neumann_update(u, g, neu_rhs)
    return change
