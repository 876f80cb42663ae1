"""Acceptance suite: one test per criterion, driven by the shipped presets.

Each criterion runs its preset once at one thread (the bundles double as the
baseline for the determinism criterion, which reruns everything at eight
threads and compares CSV bytes).  Every test prints one PASS/FAIL line.
"""

import math
import time

import numpy as np
import pytest

from ergocell.cli import resolve_config
from ergocell.oracles import poisson_cell_masses
from ergocell.runners import execute

PRESETS = ["AC1", "AC2", "AC3", "AC4", "AC5", "AC6", "AC7", "AC8", "AC9",
           "AC9b", "AC10", "AC11", "AC12", "AC12b"]

_cache = {}


def bundle(name, threads=1):
    key = (name, threads)
    if key not in _cache:
        t0 = time.perf_counter()
        b = execute(resolve_config(name), threads=threads)
        _cache[key] = (b, time.perf_counter() - t0)
    return _cache[key]


def report(name, ok, detail):
    print(f"{name}: {'PASS' if ok else 'FAIL'} -- {detail}")
    assert ok, f"{name}: {detail}"


def rows_by(probe_rows, prefix):
    return [r for r in probe_rows if str(r[1]).startswith(prefix)]


def test_ac1_linear_poisson_oracle():
    b, wall = bundle("AC1")
    rows = rows_by(b.probe, "poisson_vs_solver")
    errs = [abs(r[4] - r[5]) for r in rows]
    bounds = [r[6] for r in rows]
    ok = len(rows) == 20 and all(e <= bd for e, bd in zip(errs, bounds)) and wall <= 120
    report("AC1", ok,
           f"20 realizations, worst |solver-oracle| = {max(errs):.4f} "
           f"(bound {min(bounds):.3f}), wall {wall:.0f}s <= 120s")


def test_ac2_laplacian_beta_pinch():
    b, wall = bundle("AC2")
    beta = b.manifest["summary"]["beta_est"]
    ok = 0.9 <= beta <= 1.1 and wall <= 300
    report("AC2", ok, f"beta_est = {beta:.4f} in [0.9, 1.1], wall {wall:.0f}s <= 300s")


def test_ac3_pucci_beta_bracket():
    b, wall = bundle("AC3")
    beta = b.manifest["summary"]["beta_est"]
    ok = 0.7 <= beta <= 1.0 and wall <= 300
    report("AC3", ok, f"beta_est = {beta:.4f} in [0.8-0.1, 0.9+0.1], wall {wall:.0f}s")


def test_ac4_linf_contraction():
    b, _ = bundle("AC4")
    rows = rows_by(b.probe, "linf_pair")
    viol = sum(1 for r in rows if r[4] > r[6])
    ok = len(rows) == 200 and viol == 0
    report("AC4", ok, f"{len(rows)} pairs, {viol} violations of "
                      "|f(X)-f(Y)| <= |X-Y|_inf + 2 tol")


def test_ac5_linear_variance_scaling():
    b, wall = bundle("AC5")
    con = {}
    for r in b.concentration:
        con[r[1]] = {"var": r[4], "M": r[2]}
    sigma2 = 0.25
    a = poisson_cell_masses(8.0, -20000, 20000)
    pred = sigma2 * float(np.sum(a ** 2))
    ratio = con[8.0]["var"] / pred
    slope = next(r[2] for r in b.rates if r[1] == "variance_vs_R")
    ok = 0.75 <= ratio <= 1.25 and -1.35 <= slope <= -0.65 and wall <= 600
    report("AC5", ok, f"var(R=8)/oracle = {ratio:.3f} in [0.75, 1.25], "
                      f"slope = {slope:.3f} in [-1.35, -0.65], wall {wall:.0f}s")


def _tails(b):
    out = {}
    for r in b.concentration:
        out.setdefault(r[1], {})[r[6]] = r[7]
    return out


def test_ac6_nonlinear_concentration_direction():
    b, wall = bundle("AC6")
    tails = _tails(b)
    M = b.concentration[0][2]
    floor = 5.0 / M
    bad_t = [t for t in tails[8.0]
             if tails[8.0][t] > floor and tails[32.0][t] > floor
             and tails[32.0][t] > tails[8.0][t]]
    variances = {r[1]: r[4] for r in b.concentration}
    vs = [variances[R] for R in (8.0, 16.0, 32.0)]
    ok = not bad_t and vs[0] > vs[1] > vs[2] and wall <= 900
    report("AC6", ok, f"tail ordering violations {bad_t}, variances {vs[0]:.2e} > "
                      f"{vs[1]:.2e} > {vs[2]:.2e}, wall {wall:.0f}s <= 900s")


def test_ac7_dyadic_cauchy():
    b, _ = bundle("AC7")
    rows = rows_by(b.probe, "dyadic_diff")
    diffs = [(r[2], r[4], r[5]) for r in rows]  # (N, diff, stderr)
    within = all(d <= 4 * se for _, d, se in diffs)
    decreasing = all(b_ <= a_ for (_, a_, _), (_, b_, _) in zip(diffs, diffs[1:]))
    ok = within or decreasing
    report("AC7", ok, "diffs " + ", ".join(
        f"N={int(N)}: {d:.4f} (4se={4*se:.4f})" for N, d, se in diffs)
        + f"; within-4se={within}, decreasing={decreasing}")


def test_ac8_constant_data_identities():
    b, _ = bundle("AC8")
    rows = rows_by(b.probe, "const_")
    worst = max(abs(r[4] - r[5]) for r in rows)
    ok = len(rows) == 6 and all(abs(r[4] - r[5]) <= r[6] for r in rows)
    report("AC8", ok, f"dirichlet c / neumann -c for c in {{-1, 0.3, 1}}, "
                      f"worst |err| = {worst:.2e} <= 2 tol")


def test_ac9_neumann_l1_decay():
    b2, w2 = bundle("AC9")
    b3, w3 = bundle("AC9b")
    s2 = next(r[2] for r in b2.rates if r[1] == "site_response_vs_R")
    s3 = next(r[2] for r in b3.rates if r[1] == "site_response_vs_R")
    ok = s2 <= -0.6 and s3 <= -1.5 and (w2 + w3) <= 900
    report("AC9", ok, f"d=2 lam/Lam=0.8 exponent {s2:.3f} <= -0.6; "
                      f"d=3 lam=Lam exponent {s3:.3f} <= -1.8+0.3; "
                      f"wall {w2 + w3:.0f}s <= 900s")


def test_ac10_comparison_suite():
    b, _ = bundle("AC10")
    rows = rows_by(b.probe, "comparison_")
    viol = sum(1 for r in rows if r[4] > r[6])
    ok = len(rows) == 100 and viol == 0
    report("AC10", ok, f"{len(rows)} ordered pairs across operator kinds, "
                       f"{viol} violations beyond 2 tol")


def test_ac11_truncation_certification():
    b, _ = bundle("AC11")
    rows = rows_by(b.probe, "truncation_")
    viol = sum(1 for r in rows if r[4] > r[6])
    worst = max(r[4] / r[6] for r in rows)
    ok = len(rows) == 20 and viol == 0
    report("AC11", ok, f"20 instances, {viol} violations; worst "
                       f"|v(L)-v(2L)|/bound = {worst:.3f}")


def test_ac12_general_domain_sweep():
    b, wall = bundle("AC12")
    errs = [(r[1], r[5]) for r in b.domain]
    vals = [e for _, e in errs]
    decreasing = all(y < x for x, y in zip(vals, vals[1:]))
    small = vals[-1] <= 0.1 * 1.0
    b2, wall2 = bundle("AC12b")
    vals2 = [r[5] for r in b2.domain]
    dec2 = all(y < x for x, y in zip(vals2, vals2[1:]))
    ok = decreasing and small and dec2 and (wall + wall2) <= 1800
    detail = (f"linear sup errors {['%.4f' % v for v in vals]} decreasing={decreasing}, "
              f"err(1/32) = {vals[-1]:.4f} <= 0.1; pucci errors "
              f"{['%.4f' % v for v in vals2]} decreasing={dec2}; "
              f"wall {wall + wall2:.0f}s <= 1800s")
    if not (decreasing and dec2):
        detail += (" | note: at M=20 the band-sup of the MC mean is noise-"
                   "dominated and the theory envelope sqrt(log 1/eps)*eps^(1/7) "
                   "is itself non-monotone over {1/8..1/32}; see the decisions ledger")
    report("AC12", ok, detail)


def test_ac13_determinism_across_threads():
    names = []
    mismatched = []
    for name in PRESETS:
        b1, _ = bundle(name, threads=1)
        b8, _ = bundle(name, threads=8)
        f1, f8 = b1.files(), b8.files()
        for csv in ("concentration.csv", "rates.csv", "domain_sweep.csv",
                    "probe.csv"):
            if f1[csv] != f8[csv]:
                mismatched.append(f"{name}/{csv}")
        names.append(name)
    ok = not mismatched
    report("AC13", ok, f"CSVs bitwise identical across 1 vs 8 threads for "
                       f"{len(names)} presets" +
           (f"; mismatches: {mismatched}" if mismatched else ""))
