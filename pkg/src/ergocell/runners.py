"""Experiment execution and bit-stable result emission.

Every runner consumes a validated RunConfig and returns a ResultsBundle of
typed CSV rows plus a manifest; writing is atomic (temp dir + rename).  Rows
are produced in deterministic order (realization index, then grid order), so
output bytes do not depend on the thread count.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field as dfield
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__, kernels
from .cells import (CellInstance, CellProblem, dirichlet_truncation_bound,
                    estimate_beta, indicator_data)
from .config import (ConfigError, RunConfig, build_domain, build_field,
                     build_gspec, build_nu, build_operator, build_solver,
                     serialize_config, validate)
from .domain import (GBarTable, build_gbar_table, constant_gbar_table,
                     epsilon_sweep, theory_alpha0)
from .fields import FieldSpec, SiteLaw, certificate
from .fitting import FitError, fit_exponent
from .grids import BoundaryData, build_box_grid
from .operators import classify_convexity, hjb, isaacs, linear_trace, pucci
from .oracles import poisson_value_piecewise_linear
from .solver import SolverConfig, solve
from .stats import (ContinuityReport, ExperimentError, ExperimentSpec,
                    continuity_sweep, dyadic_cauchy, l2_perturbation_probe,
                    linf_contraction_probe, make_cell_problem,
                    run_concentration, site_response_curve, theoretical_betahat)

CONCENTRATION_HEADER = ("experiment_id", "R", "M", "mean", "var", "stderr",
                        "t", "tail", "theoretical_betahat")
RATES_HEADER = ("experiment_id", "quantity", "slope", "stderr", "ci_lo", "ci_hi")
DOMAIN_HEADER = ("experiment_id", "eps", "R", "band_width", "M",
                 "sup_err_mean_vs_hom", "per_real_sup_dev_q50",
                 "per_real_sup_dev_q95", "fitted_alpha0", "theory_alpha0")
PROBE_HEADER = ("experiment_id", "probe", "R", "index", "value", "aux", "bound")


def _fmt(x: Any) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class ResultsBundle:
    experiment_id: str
    manifest: Dict[str, Any]
    concentration: List[tuple] = dfield(default_factory=list)
    rates: List[tuple] = dfield(default_factory=list)
    domain: List[tuple] = dfield(default_factory=list)
    probe: List[tuple] = dfield(default_factory=list)

    def csv_text(self, header: Sequence[str], rows: List[tuple]) -> str:
        lines = [",".join(header)]
        lines.extend(",".join(_fmt(v) for v in row) for row in rows)
        return "\n".join(lines) + "\n"

    def files(self) -> Dict[str, str]:
        return {
            "manifest.json": json.dumps(self.manifest, sort_keys=True, indent=2) + "\n",
            "concentration.csv": self.csv_text(CONCENTRATION_HEADER, self.concentration),
            "rates.csv": self.csv_text(RATES_HEADER, self.rates),
            "domain_sweep.csv": self.csv_text(DOMAIN_HEADER, self.domain),
            "probe.csv": self.csv_text(PROBE_HEADER, self.probe),
        }

    def write(self, out_dir: str) -> None:
        """Write the whole bundle atomically: temp dir, then rename."""
        parent = os.path.dirname(os.path.abspath(out_dir)) or "."
        os.makedirs(parent, exist_ok=True)
        if os.path.isdir(out_dir):
            if os.listdir(out_dir):
                raise FileExistsError(f"output dir {out_dir} is not empty")
            os.rmdir(out_dir)
        tmp = tempfile.mkdtemp(prefix=".bundle-", dir=parent)
        try:
            for name, text in self.files().items():
                with open(os.path.join(tmp, name), "w", encoding="utf-8", newline="\n") as f:
                    f.write(text)
            os.rename(tmp, out_dir)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise


def _manifest(cfg: RunConfig, wall: float, summary: Dict[str, Any]) -> Dict[str, Any]:
    man = {
        "config": cfg.raw,
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "wall_time_s": wall,
        "summary": summary,
    }
    try:
        fs = build_field(cfg.block("field"))
        cert = certificate(fs)
        man["certificates"] = {
            "mixing_range": cert.range,
            "rho": cert.rho(fs.lattice_dim + 1),
            "lsi": cert.lsi_flag,
            "lsi_constant": cert.lsi_constant,
        }
    except Exception:
        man["certificates"] = None
    return man


def execute(cfg: RunConfig, threads: Optional[int] = None,
            allow_flagged: bool = False) -> ResultsBundle:
    errors, warnings = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    if warnings and not allow_flagged:
        raise ConfigError("flagged configuration (pass allow_flagged to run): "
                          + "; ".join(warnings))
    workers = threads if threads is not None else cfg.threads
    t0 = time.perf_counter()
    runner = {
        "cell_concentration": _run_cell_concentration,
        "dyadic_cauchy": _run_dyadic,
        "beta_estimate": _run_beta,
        "lipschitz_probe": _run_lipschitz,
        "continuity_sweep": _run_continuity,
        "domain_sweep": _run_domain,
        "oracle_check": _run_oracle_check,
    }[cfg.experiment]
    bundle, summary = runner(cfg, workers)
    summary["warnings"] = warnings
    bundle.manifest = _manifest(cfg, time.perf_counter() - t0, summary)
    return bundle


def _experiment_spec(cfg: RunConfig, workers: int) -> ExperimentSpec:
    op = build_operator(cfg.block("operator"))
    fs = build_field(cfg.block("field"))
    geo = cfg.block("geometry")
    stats_b = cfg.block("statistics")
    nu = build_nu(geo, op.dim)
    return ExperimentSpec(
        cell_kind=geo.get("cell_kind", "dirichlet"),
        nu=nu, op=op, field_spec=fs,
        R_list=tuple(float(r) for r in geo.get("R_list", [8.0])),
        samples=int(stats_b.get("samples", 100)),
        t_grid=tuple(float(t) for t in stats_b.get("t_grid", [0.02, 0.05, 0.1, 0.2])),
        master_seed=cfg.master_seed,
        bootstrap=int(stats_b.get("bootstrap", 400)),
        L_rule=float(geo.get("L_rule", 4.0)),
        h_rule=float(geo.get("h_rule", 16.0)),
        h_max=float(geo.get("h_max", 1.0)),
        height_rule=float(geo["height_rule"]) if geo.get("height_rule") is not None else None,
        delta=float(geo.get("delta", 0.0)),
        extension=geo.get("extension", "constant"),
        workers=workers,
        neumann_variant=cfg.block("statistics").get("neumann_variant", "theorem"),
        n_pairs=int(geo["n_pairs"]) if geo.get("n_pairs") else None,
    )


def _concentration_rows(bundle: ResultsBundle, rep) -> None:
    for R in rep.R_list:
        for t, tail in zip(rep.t_grid, rep.tails[R]):
            bundle.concentration.append(
                (bundle.experiment_id, float(R), rep.samples, rep.means[R],
                 rep.variances[R], rep.stderrs[R], float(t), float(tail),
                 rep.betahat.value))


def _run_cell_concentration(cfg: RunConfig, workers: int):
    spec = _experiment_spec(cfg, workers)
    scfg = build_solver(cfg.block("solver"))
    rep = run_concentration(spec, cfg.experiment_id, solver_cfg=scfg)
    bundle = ResultsBundle(cfg.experiment_id, {})
    _concentration_rows(bundle, rep)
    if rep.variance_fit is not None:
        f = rep.variance_fit
        bundle.rates.append((cfg.experiment_id, "variance_vs_R", f.slope,
                             f.stderr, f.ci_lo, f.ci_hi))
    summary = {"means": {str(R): rep.means[R] for R in rep.R_list},
               "invalid": {str(R): rep.invalid[R] for R in rep.R_list},
               "betahat": rep.betahat.value,
               "betahat_admissible": rep.betahat.admissible,
               "delta": spec.delta}
    return bundle, summary


def _run_dyadic(cfg: RunConfig, workers: int):
    spec = _experiment_spec(cfg, workers)
    scfg = build_solver(cfg.block("solver"))
    rep = run_concentration(spec, cfg.experiment_id, solver_cfg=scfg)
    rows, verdict = dyadic_cauchy(rep)
    bundle = ResultsBundle(cfg.experiment_id, {})
    _concentration_rows(bundle, rep)
    for i, (N, diff, se) in enumerate(rows):
        bundle.probe.append((cfg.experiment_id, "dyadic_diff", float(N), i,
                             diff, se, 4.0 * se))
    summary = {"verdict": verdict, "delta": spec.delta}
    return bundle, summary


def _run_beta(cfg: RunConfig, workers: int):
    op = build_operator(cfg.block("operator"))
    geo = cfg.block("geometry")
    scfg = build_solver(cfg.block("solver"))
    kind = geo.get("cell_kind", "dirichlet")
    bf = estimate_beta(op, [float(r) for r in geo["R_list"]],
                       h_rule=float(geo.get("h_rule", 32.0)),
                       L_rule=float(geo.get("L_rule", 4.0)),
                       kind=kind, solver_cfg=scfg,
                       allow_narrow=bool(geo.get("allow_narrow", False)),
                       h_cap=float(geo.get("h_cap", 1.0)))
    bundle = ResultsBundle(cfg.experiment_id, {})
    for i, (R, v) in enumerate(bf.responses):
        bundle.probe.append((cfg.experiment_id, "site_response", R, i, v,
                             0.0, 0.0))
    f = bf.fit
    bundle.rates.append((cfg.experiment_id, "site_response_vs_R", f.slope,
                         f.stderr, f.ci_lo, f.ci_hi))
    summary = {"beta_est": bf.beta_est, "bracket": list(bf.bracket),
               "flags": list(bf.flags), "kind": kind}
    return bundle, summary


def _run_lipschitz(cfg: RunConfig, workers: int):
    op = build_operator(cfg.block("operator"))
    fs = build_field(cfg.block("field"))
    geo = cfg.block("geometry")
    pb = cfg.block("probe")
    scfg = build_solver(cfg.block("solver"))
    R = float(geo.get("R_list", [4.0])[0])
    nu = build_nu(geo, op.dim)
    problem = make_cell_problem(geo.get("cell_kind", "dirichlet"), nu, op, fs, R,
                                L_rule=float(geo.get("L_rule", 4.0)),
                                h_rule=float(geo.get("h_rule", 8.0)),
                                master_seed=cfg.master_seed, solver_cfg=scfg)
    bundle = ResultsBundle(cfg.experiment_id, {})
    n_pairs = int(pb.get("n_pairs", 100))
    rows = linf_contraction_probe(problem, fs, n_pairs, cfg.master_seed, workers)
    for i, (dv, dinf, tol) in enumerate(rows):
        bundle.probe.append((cfg.experiment_id, "linf_pair", R, i, dv, dinf,
                             dinf + 2.0 * tol))
    n_l2 = int(pb.get("n_l2", 0))
    if n_l2:
        rows2 = l2_perturbation_probe(problem, fs, n_l2, cfg.master_seed)
        for i, (dv, z2) in enumerate(rows2):
            bundle.probe.append((cfg.experiment_id, "l2_perturbation", R, i,
                                 dv, z2, 0.0))
    summary = {"max_linf_violation": float(np.max(rows[:, 0] - rows[:, 1] - 2e-8))}
    return bundle, summary


def _run_continuity(cfg: RunConfig, workers: int):
    op = build_operator(cfg.block("operator"))
    fs = build_field(cfg.block("field"))
    geo = cfg.block("geometry")
    sw = cfg.block("sweep")
    scfg = build_solver(cfg.block("solver"))
    n_angles = int(sw.get("n_angles", 16))
    angles = [2 * math.pi * k / n_angles for k in range(n_angles)]
    rep = continuity_sweep(op, fs, angles, R=float(geo.get("R_list", [8.0])[0]),
                           M=int(sw.get("M", 60)), master_seed=cfg.master_seed,
                           L_rule=float(geo.get("L_rule", 4.0)),
                           h_rule=float(geo.get("h_rule", 8.0)),
                           workers=workers, experiment_id=cfg.experiment_id,
                           solver_cfg=scfg)
    bundle = ResultsBundle(cfg.experiment_id, {})
    for i, (th, mu, se) in enumerate(zip(rep.angles, rep.mus, rep.stderrs)):
        bundle.probe.append((cfg.experiment_id, "mu_vs_angle", float(th), i,
                             float(mu), float(se), 0.0))
    summary = {"alpha_prime": rep.alpha_prime, "fitted_C": rep.fitted_C,
               "max_excess": rep.max_excess,
               "mu_spread": float(rep.mus.max() - rep.mus.min())}
    return bundle, summary


def _run_domain(cfg: RunConfig, workers: int):
    op = build_operator(cfg.block("operator"))
    fs = build_field(cfg.block("field"))
    db = cfg.block("domain")
    scfg = build_solver(cfg.block("solver"))
    gspec = build_gspec(db, fs)
    dom = build_domain(db)
    table = None
    gb = db.get("gbar", {})
    if gb.get("mode") == "constant":
        bh = theoretical_betahat("dirichlet", classify_convexity(op), op.dim,
                                 op.lam, op.Lam)
        table = constant_gbar_table(float(gb["value"]), bh)
    rep = epsilon_sweep(dom, gspec, op,
                        [float(e) for e in db["eps_list"]],
                        M=int(db.get("M", 20)), table=table,
                        h_rule=float(db.get("h_rule", 8.0)),
                        master_seed=cfg.master_seed, workers=workers,
                        experiment_id=cfg.experiment_id,
                        anchor_gap=2 * math.pi / int(db.get("anchor_n", 64)),
                        cell_R=float(db.get("cell_R", 8.0)),
                        cell_M=int(db.get("cell_M", 50)),
                        n_pairs=int(db["n_pairs"]) if db.get("n_pairs") else None,
                        solver_cfg=scfg)
    bundle = ResultsBundle(cfg.experiment_id, {})
    fitted = -rep.fitted_alpha0.slope if rep.fitted_alpha0 is not None else math.nan
    for eps in rep.eps_list:
        bundle.domain.append((cfg.experiment_id, eps, rep.R_of_eps[eps],
                              rep.band_width[eps], rep.samples,
                              rep.sup_err_mean[eps], rep.per_real_q50[eps],
                              rep.per_real_q95[eps], fitted, rep.theory_alpha0))
    if rep.fitted_alpha0 is not None:
        f = rep.fitted_alpha0
        bundle.rates.append((cfg.experiment_id, "sup_err_vs_inv_eps", f.slope,
                             f.stderr, f.ci_lo, f.ci_hi))
    summary = {"sup_err": {str(e): rep.sup_err_mean[e] for e in rep.eps_list},
               "betahat": rep.betahat.value, "flags": list(rep.flags)}
    return bundle, summary


# -- oracle_check subkinds ----------------------------------------------------

def _run_oracle_check(cfg: RunConfig, workers: int):
    sub = cfg.block("probe").get("kind", "poisson")
    return {
        "poisson": _oracle_poisson,
        "constants": _oracle_constants,
        "comparison": _oracle_comparison,
        "truncation": _oracle_truncation,
    }[sub](cfg, workers)


def _oracle_poisson(cfg: RunConfig, workers: int):
    """Linear Dirichlet cell versus the exact half-plane Poisson integral of
    the effective (piecewise-linear nodal) boundary data with constant tails."""
    op = build_operator(cfg.block("operator"))
    fs = build_field(cfg.block("field"))
    geo = cfg.block("geometry")
    scfg = build_solver(cfg.block("solver"))
    R = float(geo.get("R_list", [8.0])[0])
    n_real = int(cfg.block("statistics").get("samples", 20))
    problem = make_cell_problem("dirichlet", build_nu(geo, 2), op, fs, R,
                                L_rule=float(geo.get("L_rule", 8.0)),
                                h_rule=float(geo.get("h_rule", 32.0)),
                                h_max=float(geo.get("h_max", 1.0)),
                                master_seed=cfg.master_seed, solver_cfg=scfg)
    xs = problem.bottom_pts[:, 0]
    order = np.argsort(xs)
    bundle = ResultsBundle(cfg.experiment_id, {})
    worst = 0.0
    for i in range(1, n_real + 1):
        f = fs.realize(cfg.master_seed, i)
        bc = problem.boundary_data(field=f)
        vals = bc.dirichlet[order]
        oracle = poisson_value_piecewise_linear(xs[order], vals, R,
                                                tail_left=float(vals[0]),
                                                tail_right=float(vals[-1]))
        cv = problem.evaluate(field=f)
        osc = float(vals.max() - vals.min())
        bound = cv.truncation_bound + 0.02 * osc
        bundle.probe.append((cfg.experiment_id, "poisson_vs_solver", R, i,
                             cv.value, oracle, bound))
        worst = max(worst, abs(cv.value - oracle))
    return bundle, {"worst_abs_err": worst, "n_realizations": n_real}


def _oracle_constants(cfg: RunConfig, workers: int):
    op = build_operator(cfg.block("operator"))
    geo = cfg.block("geometry")
    scfg = build_solver(cfg.block("solver"))
    R = float(geo.get("R_list", [4.0])[0])
    L = float(geo.get("L_rule", 4.0)) * R
    h = R / float(geo.get("h_rule", 8.0))
    cs = [float(c) for c in cfg.block("probe").get("constants", [-1.0, 0.3, 1.0])]
    bundle = ResultsBundle(cfg.experiment_id, {})
    worst = 0.0
    for i, c in enumerate(cs):
        fs = FieldSpec(op.dim - 1, SiteLaw("bernoulli", p=1.0, a=c - 1.0, b=c))
        f = fs.realize(cfg.master_seed, 1)
        for kind, expected in (("dirichlet", c), ("neumann", -c)):
            inst = CellInstance(kind, tuple(build_nu(geo, op.dim)), R, L, op, f, h)
            cv = CellProblem(inst, solver_cfg=scfg).evaluate(field=f)
            tol = scfg.resolve_tol(max(abs(c), 1.0))
            bundle.probe.append((cfg.experiment_id, f"const_{kind}", R, i,
                                 cv.value, expected, 2.0 * tol))
            worst = max(worst, abs(cv.value - expected))
    return bundle, {"worst_abs_err": worst}


def _comparison_ops(d: int):
    return [
        ("linear_trace", linear_trace(np.array([[1.5, 0.3], [0.3, 1.0]]))),
        ("pucci_plus", pucci(1.0, 2.0, d=d)),
        ("pucci_minus", pucci(1.0, 2.0, d=d, plus=False)),
        ("hjb", hjb([np.eye(2), np.diag([1.0, 2.0]),
                     np.array([[1.5, 0.4], [0.4, 1.5]])], 1.0, 2.0)),
        ("isaacs", isaacs([[np.eye(2), np.diag([1.5, 1.0])],
                           [np.diag([1.0, 1.5]), 1.2 * np.eye(2)]], 1.0, 1.5)),
    ]


def _random_step_data(rng: np.random.Generator, L: float):
    edges = np.arange(-L, L + 1.0)
    vals = rng.uniform(-1.0, 1.0, size=len(edges) - 1)

    def fn(pts, vals=vals):
        idx = np.clip(np.floor(pts[:, 0] + L).astype(int), 0, len(vals) - 1)
        return vals[idx]

    return fn, vals


def _oracle_comparison(cfg: RunConfig, workers: int):
    """Ordered boundary data -> ordered solutions, across operator kinds."""
    scfg = build_solver(cfg.block("solver"))
    n_pairs = int(cfg.block("probe").get("n_pairs", 100))
    rng = np.random.default_rng(cfg.master_seed)
    ops = _comparison_ops(2)
    per = max(1, n_pairs // len(ops))
    R, L, h = 4.0, 16.0, 0.5
    bundle = ResultsBundle(cfg.experiment_id, {})
    worst = -math.inf
    i = 0
    for kind, op in ops:
        problem = CellProblem(CellInstance("dirichlet", (0.0, 1.0), R, L, op, None, h),
                              solver_cfg=scfg)
        for _ in range(per):
            lo_fn, lo_vals = _random_step_data(rng, L)
            bump = rng.uniform(0.0, 1.0, size=lo_vals.shape)
            hi_fn = lambda pts, lo=lo_fn, b=bump, L=L: lo(pts) + b[
                np.clip(np.floor(pts[:, 0] + L).astype(int), 0, len(b) - 1)]
            s_lo = problem.solve_raw(data_fn=lo_fn)
            s_hi = problem.solve_raw(data_fn=hi_fn)
            viol = float(np.nanmax(s_lo.values - s_hi.values))
            tol = max(s_lo.tol, s_hi.tol)
            bundle.probe.append((cfg.experiment_id, f"comparison_{kind}", R, i,
                                 viol, 0.0, 2.0 * tol))
            worst = max(worst, viol - 2.0 * tol)
            i += 1
    return bundle, {"worst_excess": worst, "n_pairs": i}


def _oracle_truncation(cfg: RunConfig, workers: int):
    """|value(L) - value(2L)| <= certified truncation bound at L."""
    scfg = build_solver(cfg.block("solver"))
    n_inst = int(cfg.block("probe").get("n_instances", 20))
    rng = np.random.default_rng(cfg.master_seed)
    ops = _comparison_ops(2)
    law = SiteLaw("uniform", a=-1.0, b=1.0)
    fs = FieldSpec(1, law)
    bundle = ResultsBundle(cfg.experiment_id, {})
    worst = -math.inf
    for i in range(n_inst):
        kind, op = ops[int(rng.integers(len(ops)))]
        R = float(rng.choice([4.0, 8.0]))
        f = fs.realize(cfg.master_seed, 100 + i)
        h = R / 8.0
        vals = []
        for L in (4.0 * R, 8.0 * R):
            inst = CellInstance("dirichlet", (0.0, 1.0), R, L, op, f, h)
            vals.append(CellProblem(inst, solver_cfg=scfg).evaluate(field=f))
        diff = abs(vals[0].value - vals[1].value)
        bound = vals[0].truncation_bound
        bundle.probe.append((cfg.experiment_id, f"truncation_{kind}", R, i,
                             diff, 0.0, bound))
        worst = max(worst, diff - bound)
    return bundle, {"worst_excess": worst}
