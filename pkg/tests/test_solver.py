import numpy as np
import pytest

from ergocell.grids import BoundaryData, FIVE_POINT, build_box_grid
from ergocell.operators import hjb, isaacs, linear_trace, pucci
from ergocell.solver import (SolverConfig, SolverError, regularize_data,
                             regularize_lattice_field, solve)

ISAACS = isaacs([[np.eye(2), np.diag([1.5, 1.0])],
                 [np.diag([1.0, 1.5]), 1.2 * np.eye(2)]], 1.0, 1.5)


def const_bc(grid, c):
    return BoundaryData.from_callables(
        grid, dirichlet=lambda p: np.full(len(p), c),
        truncation=lambda p: np.full(len(p), c),
        neumann=(lambda p: np.full(len(p), c)) if grid.neumann_idx.size else None)


def test_constant_data_one_shot():
    g = build_box_grid(2, 4.0, 4.0, h=0.5)
    for op in (pucci(1.0, 2.0), ISAACS):
        sol = solve(g, op, const_bc(g, 0.4))
        assert sol.converged
        assert np.nanmax(np.abs(sol.values - 0.4)) <= 2 * sol.tol
        assert sol.iterations <= 1


def test_separable_harmonic_h2():
    errs = []
    for h in (0.1, 0.05):
        g = build_box_grid(2, np.pi * 2, 2.0, h=h, scheme=FIVE_POINT)
        exact = lambda p: np.exp(-p[:, 1]) * np.cos(p[:, 0])
        bc = BoundaryData.from_callables(g, dirichlet=exact, truncation=exact)
        sol = solve(g, linear_trace(np.eye(2)), bc)
        pts = g.node_coords(g.interior_idx)
        errs.append(np.abs(sol.values[g.interior_idx] - exact(pts)).max())
    assert errs[0] < 0.02
    assert errs[0] / errs[1] > 3.0  # second order


def test_neumann_constant_linear_profile():
    R = 4.0
    g = build_box_grid(2, 16.0, 2 * R, h=0.25, bottom="neumann")
    c = -0.8
    bc = BoundaryData.from_callables(
        g, neumann=lambda p: np.full(len(p), c),
        dirichlet=lambda p: np.zeros(len(p)),
        truncation=lambda p: c * (p[:, 1] - 2 * R))
    sol = solve(g, hjb([np.eye(2), np.diag([1.0, 1.5])], 1.0, 1.5), bc)
    node = g.flat_index(np.array([int(16 / 0.25), int(R / 0.25)]))
    assert sol.values[node] == pytest.approx(-c * R, abs=1e-6)


def random_step_bc(grid, rng, L):
    vals = rng.uniform(-1, 1, size=int(2 * L) + 1)
    fn = lambda p: vals[np.clip(np.floor(p[:, 0] + L).astype(int), 0, len(vals) - 1)]
    return BoundaryData.from_callables(
        grid, dirichlet=fn,
        truncation=lambda p: fn(np.stack([np.clip(p[:, 0], -L, L),
                                          np.zeros(len(p))], axis=1)))


@pytest.mark.parametrize("op", [linear_trace(np.eye(2)), pucci(1.0, 2.0), ISAACS])
def test_comparison_contraction(op):
    g = build_box_grid(2, 4.0, 4.0, h=0.5)
    rng = np.random.default_rng(5)
    for _ in range(20):
        bc1 = random_step_bc(g, rng, 4.0)
        bc2 = random_step_bc(g, rng, 4.0)
        s1, s2 = solve(g, op, bc1), solve(g, op, bc2)
        gap = max(np.max(bc1.dirichlet - bc2.dirichlet),
                  np.max(bc1.truncation - bc2.truncation), 0.0)
        viol = np.nanmax(s1.values - s2.values) - gap
        assert viol <= 2 * max(s1.tol, s2.tol) + 1e-12


def test_initialization_independence():
    g = build_box_grid(2, 4.0, 4.0, h=0.5)
    rng = np.random.default_rng(6)
    bc = random_step_bc(g, rng, 4.0)
    op = pucci(1.0, 2.0)
    cfg = SolverConfig(accelerator="nonlinear_gauss_seidel", warm_start_linear=False)
    sols = []
    for u0 in (np.zeros(g.n_nodes), np.full(g.n_nodes, 1.0),
               np.full(g.n_nodes, -1.0), rng.normal(size=g.n_nodes)):
        sols.append(solve(g, op, bc, cfg, u0=u0.copy()))
    for s in sols[1:]:
        assert np.nanmax(np.abs(s.values - sols[0].values)) <= 10 * sols[0].tol


def test_accelerators_agree():
    # instance small enough that the residual-to-error constant stays ~O(1)
    g = build_box_grid(2, 4.0, 4.0, h=0.5)
    rng = np.random.default_rng(7)
    bc = random_step_bc(g, rng, 4.0)
    for op in (pucci(1.0, 2.0), hjb([np.eye(2), np.diag([1.0, 2.0])], 1.0, 2.0)):
        ref = solve(g, op, bc, SolverConfig(accelerator="policy_iteration"))
        for acc in ("plain", "nonlinear_gauss_seidel"):
            s = solve(g, op, bc, SolverConfig(accelerator=acc))
            assert np.nanmax(np.abs(s.values - ref.values)) <= 10 * ref.tol


def test_policy_iteration_rejected_for_isaacs():
    g = build_box_grid(2, 4.0, 4.0, h=0.5)
    with pytest.raises(SolverError):
        solve(g, ISAACS, const_bc(g, 0.0),
              SolverConfig(accelerator="policy_iteration"))


def test_max_iters_flags_nonconvergence():
    g = build_box_grid(2, 8.0, 8.0, h=0.25)
    rng = np.random.default_rng(8)
    bc = random_step_bc(g, rng, 8.0)
    cfg = SolverConfig(accelerator="plain", max_iters=5, warm_start_linear=False)
    sol = solve(g, pucci(1.0, 2.0), bc, cfg)
    assert not sol.converged
    assert sol.sup_residual > sol.tol


# -- sup-convolution -----------------------------------------------------

def test_regularize_lipschitz_fixed_point():
    # an L-Lipschitz function with L <= 1/delta is its own regularization
    zs = np.linspace(-10, 10, 8001).reshape(-1, 1)
    psi = lambda y: np.sin(np.asarray(y)[:, 0])  # 1-Lipschitz
    for delta in (1.0, 0.5):
        pd = regularize_data(psi, delta, zs)
        ys = np.linspace(-8, 8, 57).reshape(-1, 1)
        vals = pd(ys)
        ref = psi(ys)
        # discrete z-grid can only undershoot, by at most the grid spacing
        assert np.all(vals <= ref + 1e-12)
        assert np.allclose(vals, ref, atol=5e-3)


def test_regularize_indicator_ramp():
    cells = lambda j: (np.asarray(j)[..., 0] == 0).astype(float)
    pd = regularize_lattice_field(cells, delta=0.5, bound=1.0)
    ys = np.array([[-0.25], [0.5], [1.2], [1.5], [2.0]])
    expect = np.array([1 - 0.25 / 0.5, 1.0, 1 - 0.2 / 0.5, 0.0, 0.0])
    assert np.allclose(pd(ys), expect)


def test_regularize_monotone_in_delta():
    rng = np.random.default_rng(9)
    vals = rng.uniform(-1, 1, size=64)
    cells = lambda j: vals[np.clip(np.asarray(j)[..., 0] + 32, 0, 63)]
    ys = rng.uniform(-20, 20, size=(200, 1))
    p1 = regularize_lattice_field(cells, 0.25, 1.0)(ys)
    p2 = regularize_lattice_field(cells, 0.5, 1.0)(ys)
    base = vals[np.clip(np.floor(ys[:, 0]).astype(int) + 32, 0, 63)]
    assert np.all(p1 <= p2 + 1e-12)
    assert np.all(p1 >= base - 1e-12)


def test_selection_stability_in_delta():
    # solved probe value is nonincreasing in delta (monotone limit selection)
    from ergocell.cells import CellInstance, CellProblem
    from ergocell.fields import FieldSpec, SiteLaw
    fs = FieldSpec(1, SiteLaw("bernoulli", p=0.5, a=0.0, b=1.0))
    f = fs.realize(12, 5)
    vals = []
    for delta in (1.0, 0.5, 0.25):
        inst = CellInstance("dirichlet", (0.0, 1.0), 4.0, 16.0, pucci(1.0, 2.0),
                            f, 0.25, delta=delta)
        cv = CellProblem(inst).evaluate(field=f)
        vals.append((cv.value, cv.sup_residual))
    for (hi, rh), (lo, rl) in zip(vals, vals[1:]):
        assert lo <= hi + 2 * 1e-8 + rh + rl


def test_numpy_fallback_matches_compiled():
    # both backends converge to the same monotone fixed point
    import subprocess, sys, json, os
    code = """
import json, numpy as np
from ergocell import kernels
from ergocell.grids import BoundaryData, build_box_grid
from ergocell.operators import pucci
from ergocell.solver import SolverConfig, solve
g = build_box_grid(2, 4.0, 4.0, h=0.5)
vals = np.linspace(-1, 1, 18)
data = lambda p: vals[np.clip(np.floor(p[:, 0] + 4).astype(int), 0, 17)]
bc = BoundaryData.from_callables(
    g, dirichlet=data,
    truncation=lambda p: data(np.stack([np.clip(p[:, 0], -4, 4),
                                        np.zeros(len(p))], axis=1)))
sol = solve(g, pucci(1.0, 2.0), bc,
            SolverConfig(accelerator="nonlinear_gauss_seidel"))
print(json.dumps({"backend": kernels.BACKEND,
                  "value": float(sol.values[g.n_nodes // 2]),
                  "tol": sol.tol}))
"""
    outs = {}
    for force in ("", "1"):
        env = dict(os.environ)
        if force:
            env["ERGOCELL_FORCE_NUMPY"] = "1"
        else:
            env.pop("ERGOCELL_FORCE_NUMPY", None)
        r = subprocess.run([sys.executable, "-c", code], env=env,
                           capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
        outs[force] = json.loads(r.stdout)
    assert outs["1"]["backend"] == "numpy"
    assert abs(outs[""]["value"] - outs["1"]["value"]) <= 10 * outs[""]["tol"]
