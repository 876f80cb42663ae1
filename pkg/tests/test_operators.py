import numpy as np
import pytest

from ergocell.operators import (OperatorError, OperatorSpec, classify_convexity,
                                eval_operator, hjb, isaacs, linear_trace,
                                normalize_lift, pucci, pucci_minus_of,
                                pucci_plus_of, sym_eigenvalues,
                                transform_operator)


def rand_sym(rng, d=2, scale=1.0):
    M = rng.normal(size=(d, d)) * scale
    return 0.5 * (M + M.T)


def all_kinds(d=2):
    return [
        linear_trace(np.array([[1.5, 0.3], [0.3, 1.0]])),
        pucci(1.0, 2.0, d=d),
        pucci(1.0, 2.0, d=d, plus=False),
        hjb([np.eye(2), np.diag([1.0, 2.0]), np.array([[1.5, 0.4], [0.4, 1.5]])], 1.0, 2.0),
        isaacs([[np.eye(2), np.diag([1.5, 1.0])],
                [np.diag([1.0, 1.5]), 1.2 * np.eye(2)]], 1.0, 1.5),
    ]


def test_pucci_plus_display_value():
    # the maximal envelope itself, and the operator in the elliptic
    # (decreasing) orientation used throughout
    M = np.diag([3.0, -1.0])
    assert pucci_plus_of(M, 1.0, 2.0) == pytest.approx(5.0)
    assert eval_operator(pucci(1.0, 2.0), M) == pytest.approx(-5.0)


def test_linear_identity_case():
    assert eval_operator(linear_trace(np.eye(2)), np.eye(2)) == pytest.approx(-2.0)


def test_hjb_two_term_maximum():
    op = hjb([np.eye(2), np.diag([1.0, 2.0])], 1.0, 2.0)
    assert eval_operator(op, np.diag([-1.0, 1.0])) == pytest.approx(0.0)


def test_zero_and_homogeneity():
    rng = np.random.default_rng(0)
    for spec in all_kinds():
        assert eval_operator(spec, np.zeros((2, 2))) == 0.0
        for _ in range(30):
            M = rand_sym(rng)
            base = eval_operator(spec, M)
            for t in (0.5, 2.0, 10.0):
                assert eval_operator(spec, t * M) == pytest.approx(t * base, rel=1e-12)


def test_uniform_ellipticity_sandwich():
    # lam tr(N) <= F(M) - F(M+N) <= Lam tr(N) for N >= 0, all kinds
    rng = np.random.default_rng(1)
    for spec in all_kinds():
        for _ in range(1000):
            M = rand_sym(rng)
            B = rng.normal(size=(2, 2))
            N = B @ B.T
            diff = eval_operator(spec, M) - eval_operator(spec, M + N)
            trN = np.trace(N)
            assert spec.lam * trN - 1e-9 <= diff <= spec.Lam * trN + 1e-9


def test_pucci_envelope_sandwich():
    rng = np.random.default_rng(2)
    for spec in all_kinds():
        for _ in range(200):
            M, N = rand_sym(rng), rand_sym(rng)
            diff = eval_operator(spec, M) - eval_operator(spec, N)
            lo = -pucci_plus_of(M - N, spec.lam, spec.Lam)
            hi = -pucci_minus_of(M - N, spec.lam, spec.Lam)
            assert lo - 1e-9 <= diff <= hi + 1e-9


def test_pucci_duality():
    rng = np.random.default_rng(3)
    pp, pm = pucci(1.0, 2.0), pucci(1.0, 2.0, plus=False)
    for _ in range(200):
        M = rand_sym(rng)
        assert eval_operator(pp, M) == pytest.approx(-eval_operator(pm, -M), rel=1e-12)


def test_transform_identity_and_rotation():
    rng = np.random.default_rng(4)
    lt = linear_trace(np.array([[1.2, 0.2], [0.2, 1.0]]))
    same = transform_operator(lt, np.eye(2))
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    pp = pucci(1.0, 2.0)
    rot = transform_operator(pp, Q)
    for _ in range(50):
        M = rand_sym(rng)
        assert eval_operator(same, M) == pytest.approx(eval_operator(lt, M), rel=1e-12)
        # Pucci is rotation invariant
        assert eval_operator(rot, M) == pytest.approx(eval_operator(pp, M), rel=1e-12)


def test_transform_chain_rule_quadratic():
    # w(z) = v(Tz) with T = diag(2,1), v(y) = (y1/2)^2, w(z) = z1^2:
    # the transformed operator must see -1/2 on D^2 w = diag(2, 0)
    lt = linear_trace(np.eye(2))
    ft = transform_operator(lt, np.diag([2.0, 1.0]))
    assert eval_operator(ft, np.diag([2.0, 0.0])) == pytest.approx(-0.5)


def test_transform_composition():
    rng = np.random.default_rng(5)
    T1 = np.array([[1.0, 0.4], [0.0, 1.2]])
    T2 = np.array([[0.9, 0.0], [0.3, 1.1]])
    for spec in all_kinds():
        once = transform_operator(spec, T1 @ T2)
        twice = transform_operator(transform_operator(spec, T1), T2)
        for _ in range(30):
            M = rand_sym(rng)
            assert eval_operator(once, M) == pytest.approx(
                eval_operator(twice, M), rel=1e-10)


def test_transform_ellipticity_bookkeeping():
    pp = pucci(1.0, 2.0)
    T = np.diag([2.0, 1.0])
    ft = transform_operator(pp, T)
    assert ft.lam == pytest.approx(1.0 / 4.0)
    assert ft.Lam == pytest.approx(2.0)


def test_classify_convexity():
    # the extremal kinds are min/max of linear maps in the elliptic
    # orientation: pucci_plus is the min-type (concave) envelope
    assert classify_convexity(linear_trace(np.eye(2))) == "convex"
    assert classify_convexity(pucci(1.0, 2.0)) == "concave"
    assert classify_convexity(pucci(1.0, 2.0, plus=False)) == "convex"
    assert classify_convexity(hjb([np.eye(2)], 1.0, 1.0)) == "convex"
    assert classify_convexity(all_kinds()[4]) == "neither"


def test_eigenvalues_d3_match_lapack():
    rng = np.random.default_rng(6)
    for _ in range(200):
        M = rand_sym(rng, d=3, scale=3.0)
        ours = sym_eigenvalues(M)
        ref = np.linalg.eigvalsh(M)
        assert np.allclose(ours, ref, atol=1e-10 * max(1.0, np.abs(ref).max()))


def test_normalize_lift():
    T = np.array([[1.0, 0.5], [0.0, 1.0]])
    Tn = normalize_lift(T)
    # last column is the unit normal of span(first columns)
    assert abs(np.linalg.norm(Tn[:, -1]) - 1.0) < 1e-12
    assert abs(Tn[:, 0] @ Tn[:, -1]) < 1e-12


def test_errors():
    with pytest.raises(OperatorError):
        eval_operator(pucci(1.0, 2.0), np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(OperatorError):
        hjb([], 1.0, 2.0)
    with pytest.raises(OperatorError):
        transform_operator(pucci(1.0, 2.0), np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(OperatorError):
        OperatorSpec("pucci_plus", 2.0, 1.0, 2)
