"""Monte Carlo harness over field realizations.

Sampling is keyed by (master_seed, realization_index), results are collected
into arrays indexed by realization, and all reductions are numpy pairwise
sums, so reports are bitwise identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cells import CellInstance, CellProblem, indicator_data, leoni_bracket
from .fields import FieldSpec, certificate
from .fitting import RateFit, fit_exponent
from .operators import OperatorSpec, classify_convexity
from .solver import SolverConfig, SolverError


class ExperimentError(RuntimeError):
    pass


def _check_dyadic(R_list: Sequence[float]) -> None:
    for R in R_list:
        if abs(math.log2(R) - round(math.log2(R))) > 1e-9:
            raise ExperimentError(f"R={R} is not dyadic")
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ExperimentError("R_list must be increasing")


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    cell_kind: str
    nu: Tuple[float, ...]
    op: OperatorSpec
    field_spec: FieldSpec
    R_list: Tuple[float, ...]
    samples: int
    t_grid: Tuple[float, ...] = (0.02, 0.05, 0.1, 0.2)
    master_seed: int = 0
    bootstrap: int = 400
    L_rule: float = 4.0
    h_rule: float = 16.0
    h_max: float = 1.0            # lattice fields need h <= 1 to avoid aliasing
    height_rule: Optional[float] = None
    delta: float = 0.0
    extension: str = "constant"
    workers: int = 1
    neumann_variant: str = "theorem"
    n_pairs: Optional[int] = None

    def __post_init__(self):
        if self.samples < 50:
            raise ExperimentError("concentration experiments need M >= 50 samples")
        _check_dyadic(self.R_list)


@dataclass
class BetaHat:
    value: float
    admissible: bool
    bracket: Tuple[float, float]
    convexity: str
    note: str = ""


def theoretical_betahat(problem: str, convexity: str, d: int, lam: float,
                        Lam: float, neumann_variant: str = "theorem") -> BetaHat:
    """Concentration exponent beta-hat for the given problem/operator class.

    Dirichlet uses the singular-exponent bracket (midpoint when lam < Lam);
    the non-convex variants carry their admissibility restrictions; the
    Neumann non-convex exponent has two published forms, selected by
    ``neumann_variant`` in {'theorem', 'display'}.
    """
    ratio = lam / Lam
    bracket = leoni_bracket(lam, Lam, d)
    beta_mid = 0.5 * (bracket[0] + bracket[1])
    cc = convexity in ("convex", "concave")
    if problem == "dirichlet":
        if cc:
            return BetaHat(beta_mid, True, bracket, convexity)
        admissible = ratio > 0.5 * (d + 1) / d
        val = 2.0 * beta_mid - (d - 1)
        note = "" if admissible else "requires lam/Lam > (d+1)/(2d)"
        return BetaHat(val, admissible, bracket, convexity, note)
    if problem == "neumann":
        beta_n = ratio * (d - 1) - 1.0
        note = "neumann beta_N = 0 degenerate" if abs(beta_n) < 1e-12 else ""
        if cc:
            return BetaHat(ratio * (d - 1), True, bracket, convexity, note)
        admissible = ratio > 0.5
        if neumann_variant == "display":
            val = 2.0 * (ratio - 0.5) * (d - 1)
        else:
            val = (ratio - 0.5) * (d - 1)
        if not admissible:
            note = "requires lam/Lam > 1/2"
        return BetaHat(val, admissible, bracket, convexity, note)
    if problem == "lifted":
        return BetaHat(min(beta_mid, 2.0), True, bracket, convexity)
    raise ExperimentError(f"unknown problem {problem!r}")


@dataclass
class ConcentrationReport:
    experiment_id: str
    R_list: Tuple[float, ...]
    samples: int
    t_grid: Tuple[float, ...]
    values: Dict[float, np.ndarray]
    means: Dict[float, float]
    variances: Dict[float, float]
    stderrs: Dict[float, float]
    tails: Dict[float, np.ndarray]
    invalid: Dict[float, int]
    variance_fit: Optional[RateFit]
    betahat: BetaHat

    def tail(self, R: float, t: float) -> float:
        return float(self.tails[R][list(self.t_grid).index(t)])


def make_cell_problem(cell_kind: str, nu, op: OperatorSpec, field_spec: FieldSpec,
                      R: float, L_rule: float = 4.0, h_rule: float = 16.0,
                      delta: float = 0.0, extension: str = "constant",
                      master_seed: int = 0, h_max: float = 1.0,
                      height_rule: Optional[float] = None,
                      n_pairs: Optional[int] = None,
                      solver_cfg: Optional[SolverConfig] = None) -> CellProblem:
    from .grids import SchemeSpec
    field0 = field_spec.realize(master_seed, 0)
    h = min(R / h_rule, h_max)
    height = height_rule * R if height_rule is not None else None
    inst = CellInstance(cell_kind, tuple(nu), R, L_rule * R, op, field0, h,
                        delta=delta, extension=extension, height=height)
    scheme = SchemeSpec(n_pairs=n_pairs) if n_pairs else None
    return CellProblem(inst, scheme=scheme, solver_cfg=solver_cfg)


def _cell_problem(spec: ExperimentSpec, R: float,
                  solver_cfg: Optional[SolverConfig] = None) -> CellProblem:
    return make_cell_problem(spec.cell_kind, spec.nu, spec.op, spec.field_spec,
                             R, spec.L_rule, spec.h_rule, spec.delta,
                             spec.extension, spec.master_seed, spec.h_max,
                             spec.height_rule, spec.n_pairs, solver_cfg)


def sample_cell_values(problem: CellProblem, field_spec: FieldSpec,
                       master_seed: int, indices: Sequence[int],
                       workers: int = 1) -> np.ndarray:
    """Cell values per realization index; NaN marks a solver failure."""
    def one(idx: int) -> float:
        try:
            f = field_spec.realize(master_seed, idx)
            return problem.evaluate(field=f).value
        except SolverError:
            return math.nan

    if workers <= 1:
        return np.array([one(i) for i in indices])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, indices)))


def _parallel_values(problem: CellProblem, spec: ExperimentSpec,
                     indices: Sequence[int]) -> np.ndarray:
    return sample_cell_values(problem, spec.field_spec, spec.master_seed,
                              indices, spec.workers)


def run_concentration(spec: ExperimentSpec, experiment_id: str = "concentration",
                      solver_cfg: Optional[SolverConfig] = None) -> ConcentrationReport:
    values, means, variances, stderrs, tails, invalid = {}, {}, {}, {}, {}, {}
    for R in spec.R_list:
        problem = _cell_problem(spec, R, solver_cfg)
        vals = _parallel_values(problem, spec, range(1, spec.samples + 1))
        bad = int(np.isnan(vals).sum())
        if bad > 0.02 * spec.samples:
            raise ExperimentError(f"{bad}/{spec.samples} solver failures at R={R}")
        ok = vals[~np.isnan(vals)]
        mu = float(np.mean(ok))
        var = float(np.var(ok, ddof=1))
        values[R], means[R], variances[R] = vals, mu, var
        stderrs[R] = float(np.sqrt(var / ok.size))
        tails[R] = np.array([float(np.mean(np.abs(ok - mu) > t)) for t in spec.t_grid])
        invalid[R] = bad
    fit = None
    if len(spec.R_list) >= 3 and all(v > 0 for v in variances.values()):
        fit = fit_exponent([(R, variances[R]) for R in spec.R_list],
                           n_bootstrap=spec.bootstrap, seed=spec.master_seed)
    bh = theoretical_betahat(spec.cell_kind, classify_convexity(spec.op),
                             len(spec.nu), spec.op.lam, spec.op.Lam,
                             spec.neumann_variant)
    return ConcentrationReport(experiment_id, spec.R_list, spec.samples,
                               spec.t_grid, values, means, variances, stderrs,
                               tails, invalid, fit, bh)


def dyadic_cauchy(report: ConcentrationReport):
    """Differences |mu_{2N} - mu_N| with combined standard errors and a
    monotone-trend verdict over consecutive dyadic heights."""
    Rs = list(report.R_list)
    if len(Rs) < 2:
        raise ExperimentError("dyadic differences need at least two heights")
    for a, b in zip(Rs, Rs[1:]):
        if abs(b - 2 * a) > 1e-9:
            raise ExperimentError("R_list must be consecutive dyadic heights")
    rows = []
    for a, b in zip(Rs, Rs[1:]):
        diff = abs(report.means[b] - report.means[a])
        se = math.hypot(report.stderrs[a], report.stderrs[b])
        rows.append((a, diff, se))
    diffs = [r[1] for r in rows]
    if all(y <= x + 1e-15 for x, y in zip(diffs, diffs[1:])):
        verdict = "nonincreasing"
    elif all(r[1] <= 4 * r[2] for r in rows):
        verdict = "noise_floor"
    else:
        verdict = "increasing"
    return rows, verdict


@dataclass
class ContinuityReport:
    experiment_id: str
    angles: np.ndarray
    nus: np.ndarray
    mus: np.ndarray
    stderrs: np.ndarray
    alpha_prime: float
    fitted_C: float
    max_excess: float      # max over pairs of |dmu| - (C * dtheta^alpha' + 6 se)


def continuity_sweep(op: OperatorSpec, field_spec: FieldSpec, angles: Sequence[float],
                     R: float, M: int, master_seed: int = 0, L_rule: float = 4.0,
                     h_rule: float = 16.0, workers: int = 1,
                     experiment_id: str = "continuity",
                     solver_cfg: Optional[SolverConfig] = None) -> ContinuityReport:
    """Ergodic constant versus normal direction on the circle (d = 2).

    Directions share realization indices, so mu(nu) is sampled on coupled
    omegas; the modulus check compares adjacent jumps with the Hoelder
    envelope at exponent alpha' = betahat / (2 (1 + betahat)).
    """
    if len(angles) < 8:
        raise ExperimentError("continuity sweep needs at least 8 directions")
    angles = np.asarray(sorted(float(a) for a in angles))
    nus = np.column_stack([np.cos(angles), np.sin(angles)])
    mus = np.empty(len(angles))
    ses = np.empty(len(angles))
    for i, nu in enumerate(nus):
        problem = make_cell_problem("dirichlet", nu, op, field_spec, R,
                                    L_rule, h_rule, master_seed=master_seed,
                                    solver_cfg=solver_cfg)
        vals = sample_cell_values(problem, field_spec, master_seed,
                                  range(1, M + 1), workers)
        ok = vals[~np.isnan(vals)]
        mus[i] = float(np.mean(ok))
        ses[i] = float(np.std(ok, ddof=1) / np.sqrt(ok.size))
    bh = theoretical_betahat("dirichlet", classify_convexity(op), 2, op.lam, op.Lam)
    ap = bh.value / (2.0 * (1.0 + bh.value))
    dmu = np.abs(np.diff(mus))
    dth = np.abs(np.diff(angles))
    C = float(np.mean(dmu / dth ** ap)) if len(dmu) else 0.0
    se_pair = np.hypot(ses[:-1], ses[1:])
    excess = dmu - (C * dth ** ap + 6.0 * se_pair)
    return ContinuityReport(experiment_id, angles, nus, mus, ses, ap, C,
                            float(excess.max()) if excess.size else 0.0)


# -- Lipschitz probes -------------------------------------------------------

def linf_contraction_probe(problem: CellProblem, field_spec: FieldSpec,
                           n_pairs: int, master_seed: int = 0,
                           workers: int = 1) -> np.ndarray:
    """Rows (|f(X) - f(Y)|, |X - Y|_linf, tol) over iid realization pairs."""
    def one(k: int):
        fx = field_spec.realize(master_seed, 2 * k + 1)
        fy = field_spec.realize(master_seed, 2 * k + 2)
        bx = problem.boundary_data(field=fx)
        by = problem.boundary_data(field=fy)
        dinf = max(float(np.abs(bx.dirichlet - by.dirichlet).max(initial=0.0)),
                   float(np.abs(bx.truncation - by.truncation).max(initial=0.0)),
                   float(np.abs(bx.neumann - by.neumann).max(initial=0.0)))
        vx = problem.evaluate(field=fx)
        vy = problem.evaluate(field=fy)
        return abs(vx.value - vy.value), dinf, max(vx.sup_residual, vy.sup_residual)

    if workers <= 1:
        rows = [one(k) for k in range(n_pairs)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(n_pairs)))
    return np.array(rows)


def l2_perturbation_probe(problem: CellProblem, field_spec: FieldSpec,
                          n_trials: int, master_seed: int = 0,
                          max_sites: int = 12, amp: float = 0.5) -> np.ndarray:
    """Rows (|f(X+Z) - f(X)|, |Z|_l2) for random sparse lattice bumps Z."""
    inst = problem.inst
    d = problem.d
    rng = np.random.default_rng(master_seed + 977)
    rows = []
    span = int(inst.L) - 1
    for k in range(n_trials):
        f = field_spec.realize(master_seed, 10_000 + k)
        n_sites = int(rng.integers(1, max_sites + 1))
        sites = rng.integers(-span, span, size=(n_sites, d - 1))
        sites = np.unique(sites, axis=0)
        z = rng.uniform(-amp, amp, size=len(sites))

        def data_fn(pts, f=f, sites=sites, z=z):
            base = problem._data_values(f, pts)
            zz = pts[:, : d - 1]
            for s, zv in zip(sites, z):
                inside = np.all((zz >= s) & (zz < s + 1.0), axis=1)
                base = base + zv * inside
            return base

        v0 = problem.evaluate(field=f).value
        v1 = problem.evaluate(data_fn=data_fn).value
        rows.append((abs(v1 - v0), float(np.linalg.norm(z))))
    return np.array(rows)


def site_response_curve(op: OperatorSpec, kind: str, R_list: Sequence[float],
                        d: int = 2, L_rule: float = 4.0, h_rule: float = 16.0,
                        site=0, solver_cfg: Optional[SolverConfig] = None
                        ) -> List[Tuple[float, float]]:
    """Single-site responses over heights, for l1-decay exponent fits."""
    from .cells import single_site_response
    nu = tuple([0.0] * (d - 1) + [1.0])
    out = []
    for R in R_list:
        v = single_site_response(op, nu, float(R), L_rule * R, R / h_rule,
                                 site=site, kind=kind, solver_cfg=solver_cfg)
        out.append((float(R), v))
    return out
