"""Homogenization experiments on the unit disk and the annulus.

Boundary data g(x, y, omega) = a(x) * psi(y, omega) + b(x) oscillates at scale
epsilon through y = x / epsilon; the effective boundary condition comes from a
table of cell-problem ergodic constants at anchor normals, interpolated along
the boundary.  Error sweeps compare the oscillatory solutions against the
homogenized one on the interior band left after removing the boundary layer of
width R(eps) * eps with R(eps) = eps^(-2 / (4 + 3 betahat)).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .fields import FieldSpec, FieldRealization, eval_field
from .fitting import RateFit, fit_exponent
from .grids import (BoundaryData, DomainSpec, Grid, SchemeSpec, WIDE_DEFAULT,
                    FIVE_POINT, build_grid)
from .operators import OperatorSpec, classify_convexity
from .solver import GridSolution, SharedLU, SolverConfig, solve
from .stats import (ExperimentError, make_cell_problem, sample_cell_values,
                    theoretical_betahat, BetaHat)


@dataclass(frozen=True)
class BoundaryFn:
    """Closed-form Lipschitz profile on the boundary circle, by angle."""

    kind: str            # const | cos | sin
    amplitude: float = 1.0
    frequency: int = 1
    offset: float = 0.0

    def __call__(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "const":
            return np.full_like(theta, self.offset + self.amplitude)
        if self.kind == "cos":
            return self.offset + self.amplitude * np.cos(self.frequency * theta)
        if self.kind == "sin":
            return self.offset + self.amplitude * np.sin(self.frequency * theta)
        raise ExperimentError(f"unknown boundary profile {self.kind!r}")


@dataclass(frozen=True, eq=False)
class GSpec:
    """g(x, y, omega) = a(x) psi(y, omega) + b(x) with lattice restriction data
    (psi lives on the full d-dimensional lattice)."""

    a: BoundaryFn
    b: BoundaryFn
    field_spec: FieldSpec

    def __post_init__(self):
        if self.field_spec.lattice_dim != 2:
            raise ExperimentError("general-domain data uses restriction fields (lattice_dim = d)")

    def bound(self) -> float:
        amax = abs(self.a.amplitude) + abs(self.a.offset)
        bmax = abs(self.b.amplitude) + abs(self.b.offset)
        return amax * self.field_spec.bound() + bmax

    def evaluate(self, x: np.ndarray, realization: FieldRealization,
                 eps: float) -> np.ndarray:
        theta = np.arctan2(x[:, 1], x[:, 0])
        psi = np.asarray(eval_field(realization, x / eps), dtype=float).reshape(-1)
        return self.a(theta) * psi + self.b(theta)


@dataclass
class GBarTable:
    angles: np.ndarray        # anchor angles, increasing in [0, 2 pi)
    normals: np.ndarray
    values: np.ndarray        # gbar at anchors
    stderrs: np.ndarray
    mu_psi: np.ndarray        # ergodic constants of psi alone, per anchor
    betahat: BetaHat

    def interp(self, theta: np.ndarray) -> np.ndarray:
        """Piecewise-linear interpolation in boundary arclength (periodic)."""
        theta = np.mod(np.asarray(theta, dtype=float), 2.0 * math.pi)
        ang = np.concatenate([self.angles, [self.angles[0] + 2.0 * math.pi]])
        val = np.concatenate([self.values, [self.values[0]]])
        return np.interp(theta, ang, val)


def build_gbar_table(gspec: GSpec, op: OperatorSpec, anchor_gap: float, R: float,
                     M: int, master_seed: int = 0, L_rule: float = 4.0,
                     h_rule: float = 8.0, height_rule: Optional[float] = 2.0,
                     extension: str = "bottom_mean", workers: int = 1,
                     n_pairs: Optional[int] = None,
                     solver_cfg: Optional[SolverConfig] = None) -> GBarTable:
    """Effective boundary values at anchors on the unit circle.

    Since the data is a(x) psi + b(x) and constants pass through while
    positive factors scale by homogeneity, only the sweep of mu(psi, F, nu)
    over anchor normals is computed when a(x) >= 0; anchors with a(x) < 0
    rerun the cell Monte Carlo on the sign-flipped data.
    """
    n = int(round(2.0 * math.pi / anchor_gap))
    if n < 4:
        raise ExperimentError("anchor gap too coarse")
    angles = 2.0 * math.pi * np.arange(n) / n
    normals = -np.column_stack([np.cos(angles), np.sin(angles)])  # inward for the disk
    a_vals = gspec.a(angles)
    b_vals = gspec.b(angles)

    bh = theoretical_betahat("dirichlet", classify_convexity(op), 2, op.lam, op.Lam)
    if not bh.admissible:
        raise ExperimentError(f"inadmissible betahat configuration: {bh.note}")

    mu = np.empty(n)
    se = np.empty(n)

    def anchor_job(i: int):
        problem = make_cell_problem("dirichlet", normals[i], op, gspec.field_spec,
                                    R, L_rule, h_rule, master_seed=master_seed,
                                    height_rule=height_rule, extension=extension,
                                    n_pairs=n_pairs, solver_cfg=solver_cfg)
        # a >= 0 factors out exactly by degree-1 homogeneity, so the sweep
        # computes mu(psi, F, nu); negative factors change the operator seen
        # by the data and need the scaled solve.
        scale = 1.0 if a_vals[i] >= 0 else float(a_vals[i])
        vals = np.empty(M)
        for k in range(1, M + 1):
            f = gspec.field_spec.realize(master_seed, k)
            vals[k - 1] = problem.evaluate(field=f, scale=scale).value
        return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(M))

    if workers <= 1:
        results = [anchor_job(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(anchor_job, range(n)))

    for i, (m, s) in enumerate(results):
        mu[i] = m
        se[i] = s
    values = np.where(a_vals >= 0, a_vals * mu + b_vals, mu + b_vals)
    stderrs = np.abs(np.where(a_vals >= 0, a_vals, 1.0)) * se
    return GBarTable(angles, normals, values, stderrs, mu, bh)


def constant_gbar_table(value: float, betahat: BetaHat, n: int = 64) -> GBarTable:
    angles = 2.0 * math.pi * np.arange(n) / n
    normals = -np.column_stack([np.cos(angles), np.sin(angles)])
    z = np.zeros(n)
    return GBarTable(angles, normals, np.full(n, value), z, z, betahat)


def solve_oscillatory(domain: DomainSpec, gspec: GSpec, eps: float,
                      realization: FieldRealization, op: OperatorSpec, h: float,
                      f_inner: float = 0.0, scheme: Optional[SchemeSpec] = None,
                      solver_cfg: Optional[SolverConfig] = None,
                      grid: Optional[Grid] = None,
                      lu_cache: Optional[SharedLU] = None,
                      table=None, u0: Optional[np.ndarray] = None) -> GridSolution:
    """Solve with boundary data g(x, x/eps, omega) on the disk (Dirichlet) or
    annulus (outer Neumann, inner Dirichlet f)."""
    if h > eps / 8.0 + 1e-12:
        raise ExperimentError("grid must resolve the oscillation: h <= eps/8")
    if grid is None:
        grid = build_grid(domain, h, scheme or _default_scheme(op))
    data = lambda pts: gspec.evaluate(pts, realization, eps)
    if domain.kind == "disk":
        bc = BoundaryData.from_callables(grid, dirichlet=data)
    else:
        bc = BoundaryData.from_callables(
            grid, dirichlet=lambda pts: np.full(len(pts), f_inner), neumann=data)
    return solve(grid, op, bc, solver_cfg, u0=u0, lu_cache=lu_cache, table=table)


def solve_homogenized(domain: DomainSpec, table: GBarTable, op: OperatorSpec,
                      h: float, f_inner: float = 0.0,
                      scheme: Optional[SchemeSpec] = None,
                      solver_cfg: Optional[SolverConfig] = None,
                      grid: Optional[Grid] = None) -> GridSolution:
    if grid is None:
        grid = build_grid(domain, h, scheme or _default_scheme(op))
    data = lambda pts: table.interp(np.arctan2(pts[:, 1], pts[:, 0]))
    if domain.kind == "disk":
        bc = BoundaryData.from_callables(grid, dirichlet=data)
    else:
        bc = BoundaryData.from_callables(
            grid, dirichlet=lambda pts: np.full(len(pts), f_inner), neumann=data)
    return solve(grid, op, bc, solver_cfg)


def _default_scheme(op: OperatorSpec, n_pairs: Optional[int] = None) -> SchemeSpec:
    if n_pairs:
        return SchemeSpec(n_pairs=n_pairs)
    if op.kind == "linear_trace" and np.count_nonzero(
            op.family()[0] - np.diag(np.diag(op.family()[0]))) == 0:
        return FIVE_POINT
    return WIDE_DEFAULT


def band_radius(eps: float, betahat: float) -> float:
    """Boundary-layer height R(eps) = eps^(-2/(4+3*betahat))."""
    return eps ** (-2.0 / (4.0 + 3.0 * betahat))


def theory_alpha0(betahat: float) -> float:
    return betahat / (4.0 + 3.0 * betahat)


def neumann_rate_curve(alpha: np.ndarray, betahat: float) -> np.ndarray:
    """Exponent k(alpha) = min(2/3 * alpha/(3+alpha), alpha^2/(3+alpha),
    betahat/6) for the Neumann general-domain rate."""
    alpha = np.asarray(alpha, dtype=float)
    return np.minimum.reduce([
        (2.0 / 3.0) * alpha / (3.0 + alpha),
        alpha ** 2 / (3.0 + alpha),
        np.full_like(alpha, betahat / 6.0),
    ])


@dataclass
class ErrorReport:
    experiment_id: str
    eps_list: Tuple[float, ...]
    R_of_eps: Dict[float, float]
    band_width: Dict[float, float]
    samples: int
    sup_err_mean: Dict[float, float]      # sup over band of |mean_omega u_eps - u_bar|
    per_real_q50: Dict[float, float]
    per_real_q95: Dict[float, float]
    fitted_alpha0: Optional[RateFit]
    theory_alpha0: float
    betahat: BetaHat
    flags: Tuple[str, ...] = ()


def epsilon_sweep(domain: DomainSpec, gspec: GSpec, op: OperatorSpec,
                  eps_list: Sequence[float], M: int,
                  table: Optional[GBarTable] = None,
                  h_rule: float = 8.0, master_seed: int = 0, workers: int = 1,
                  experiment_id: str = "domain_sweep",
                  anchor_gap: float = 2.0 * math.pi / 64, cell_R: float = 8.0,
                  cell_M: int = 50, n_pairs: Optional[int] = None,
                  solver_cfg: Optional[SolverConfig] = None) -> ErrorReport:
    """Dirichlet-disk epsilon sweep: M oscillatory solves per eps against the
    homogenized solution, sup error on the interior band of width R(eps)*eps.

    Realization indices are shared across eps values, so errors along the
    sweep are coupled.  h = eps / h_rule (h_rule >= 8 resolves the data).
    """
    eps_list = tuple(float(e) for e in eps_list)
    if len(eps_list) == 0 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ExperimentError("eps_list must be decreasing")
    if M < 20:
        raise ExperimentError("epsilon sweep needs M >= 20 realizations")
    if h_rule < 8.0:
        raise ExperimentError("h rule must resolve the oscillation (>= 8)")

    if table is None:
        table = build_gbar_table(gspec, op, anchor_gap, cell_R, cell_M,
                                 master_seed=master_seed, workers=workers,
                                 n_pairs=n_pairs, solver_cfg=solver_cfg)
    bh = table.betahat

    flags = []
    sup_err, q50, q95, R_of, bandw = {}, {}, {}, {}, {}
    for eps in eps_list:
        h = eps / h_rule
        grid = build_grid(domain, h, _default_scheme(op, n_pairs))
        hom = solve_homogenized(domain, table, op, h, grid=grid,
                                solver_cfg=solver_cfg)
        R = band_radius(eps, bh.value)
        R_of[eps] = R
        bandw[eps] = R * eps
        pts = grid.node_coords(grid.interior_idx)
        rr = np.linalg.norm(pts, axis=1)
        band = rr <= domain.radius - R * eps
        if not band.any():
            raise ExperimentError(f"empty interior band at eps={eps}")

        lu_cache = SharedLU()
        from .kernels import build_policy_table
        tab = build_policy_table(grid, op)
        # deterministic warm start: the homogenized solution (shared by all
        # realizations), which cuts policy iterations for nonlinear operators
        warm = np.nan_to_num(hom.values, nan=0.0) if op.kind != "linear_trace" else None

        def one(idx: int):
            f = gspec.field_spec.realize(master_seed, idx)
            sol = solve_oscillatory(domain, gspec, eps, f, op, h, grid=grid,
                                    solver_cfg=solver_cfg, lu_cache=lu_cache,
                                    table=tab, u0=warm)
            return sol.values[grid.interior_idx]

        if workers <= 1:
            fields_vals = [one(i) for i in range(1, M + 1)]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                fields_vals = list(pool.map(one, range(1, M + 1)))
        stack = np.stack(fields_vals)
        mean_u = stack.mean(axis=0)
        hom_vals = hom.values[grid.interior_idx]
        sup_err[eps] = float(np.abs(mean_u - hom_vals)[band].max())
        dev = np.abs(stack - mean_u[None, :])[:, band].max(axis=1)
        q50[eps] = float(np.quantile(dev, 0.5))
        q95[eps] = float(np.quantile(dev, 0.95))

    fit = None
    if len(eps_list) >= 3 and all(v > 0 for v in sup_err.values()):
        fit = fit_exponent([(1.0 / e, sup_err[e]) for e in eps_list],
                           seed=master_seed)
        # slope of error vs 1/eps; alpha0 is the negated slope
    elif len(eps_list) < 3:
        flags.append("too_few_eps_for_fit")
    return ErrorReport(experiment_id, eps_list, R_of, bandw, M, sup_err,
                       q50, q95, fit, theory_alpha0(bh.value), bh, tuple(flags))
