"""Uniformly elliptic nonlinearities F and their linear changes of variables.

All operators use the decreasing (comparison-friendly) orientation: for
symmetric N >= 0,

    lam * tr(N) <= F(M) - F(M + N) <= Lam * tr(N),

so the Laplace equation is F(M) = -tr(M).  The extremal envelopes of the
class are written P_plus / P_minus in the classical increasing orientation
(`pucci_plus_of` / `pucci_minus_of`); the operator kinds ``pucci_plus`` /
``pucci_minus`` evaluate -P_plus / -P_minus so that every kind lives in the
same class and satisfies the same comparison principle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

KINDS = ("linear_trace", "pucci_plus", "pucci_minus", "hjb", "isaacs", "transformed")


class OperatorError(ValueError):
    pass


def _as_matrix_tuple(mats) -> Tuple[np.ndarray, ...]:
    out = []
    for m in mats:
        a = np.asarray(m, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise OperatorError("family matrices must be square")
        out.append(a.copy())
        out[-1].setflags(write=False)
    return tuple(out)


@dataclass(frozen=True)
class OperatorSpec:
    """A degree-1 homogeneous uniformly elliptic operator F on symmetric matrices.

    ``matrices`` holds the finite family for ``hjb`` (and the single A for
    ``linear_trace``); ``matrix_table`` holds the outer-by-inner families for
    ``isaacs``.  ``base``/``T`` describe a conjugated operator
    F_T(N) = F(T^-T N T^-1), the operator seen after the change of variables
    w(z) = v(Tz).
    """

    kind: str
    lam: float
    Lam: float
    dim: int
    matrices: Optional[Tuple[np.ndarray, ...]] = None
    matrix_table: Optional[Tuple[Tuple[np.ndarray, ...], ...]] = None
    base: Optional["OperatorSpec"] = None
    T: Optional[np.ndarray] = None
    cond_T: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise OperatorError(f"unknown operator kind {self.kind!r}")
        if not (0.0 < self.lam <= self.Lam):
            raise OperatorError("ellipticity constants must satisfy 0 < lam <= Lam")
        if self.dim < 2:
            raise OperatorError("dimension must be >= 2")
        if self.kind == "hjb" and (self.matrices is None or len(self.matrices) == 0):
            raise OperatorError("hjb needs a non-empty matrix family")
        if self.kind == "isaacs":
            if not self.matrix_table or any(len(row) == 0 for row in self.matrix_table):
                raise OperatorError("isaacs needs non-empty inner families")
        if self.kind == "transformed" and (self.base is None or self.T is None):
            raise OperatorError("transformed operator needs base and T")

    @property
    def ratio(self) -> float:
        return self.lam / self.Lam

    def family(self) -> Tuple[np.ndarray, ...]:
        if self.kind == "linear_trace":
            if self.matrices:
                return self.matrices
            return (np.eye(self.dim) * self.lam,)
        if self.kind == "hjb":
            return self.matrices
        raise OperatorError(f"{self.kind} has no flat matrix family")


def linear_trace(A=None, d: int = 2, lam: float = None, Lam: float = None) -> OperatorSpec:
    """F(M) = -tr(A M).  Default A = I (the Laplacian)."""
    if A is None:
        A = np.eye(d)
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    lo, hi = float(ev[0]), float(ev[-1])
    if lo <= 0:
        raise OperatorError("linear_trace matrix must be positive definite")
    return OperatorSpec("linear_trace", lam if lam else lo, Lam if Lam else hi,
                        d, matrices=_as_matrix_tuple([A]))


def pucci(lam: float, Lam: float, d: int = 2, plus: bool = True) -> OperatorSpec:
    kind = "pucci_plus" if plus else "pucci_minus"
    return OperatorSpec(kind, lam, Lam, d)


def hjb(matrices: Sequence, lam: float, Lam: float) -> OperatorSpec:
    mats = _as_matrix_tuple(matrices)
    if not mats:
        raise OperatorError("hjb needs a non-empty matrix family")
    return OperatorSpec("hjb", lam, Lam, mats[0].shape[0], matrices=mats)


def isaacs(table: Sequence[Sequence], lam: float, Lam: float) -> OperatorSpec:
    rows = tuple(_as_matrix_tuple(row) for row in table)
    return OperatorSpec("isaacs", lam, Lam, rows[0][0].shape[0], matrix_table=rows)


def sym_eigenvalues(M: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix; closed form for d=2, trigonometric
    Cardano form for d=3, LAPACK otherwise."""
    d = M.shape[0]
    if d == 2:
        a, b, c = M[0, 0], M[0, 1], M[1, 1]
        mean = 0.5 * (a + c)
        disc = math.hypot(0.5 * (a - c), b)
        return np.array([mean - disc, mean + disc])
    if d == 3:
        # Smallest-to-largest roots of the characteristic cubic, using the
        # shifted/scaled trigonometric formula (stable for symmetric input).
        q = np.trace(M) / 3.0
        B = M - q * np.eye(3)
        p2 = 0.5 * np.sum(B * B)
        if p2 <= 0.0:
            return np.array([q, q, q])
        p = math.sqrt(p2 / 3.0)
        detB = np.linalg.det(B / p)
        r = min(1.0, max(-1.0, detB / 2.0))
        phi = math.acos(r) / 3.0
        e1 = q + 2.0 * p * math.cos(phi)
        e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
        e2 = 3.0 * q - e1 - e3
        return np.sort(np.array([e1, e2, e3]))
    return np.linalg.eigvalsh(M)


def pucci_plus_of(M: np.ndarray, lam: float, Lam: float) -> float:
    """Classical maximal envelope P+(M) = Lam*tr(M+) - lam*tr(M-)."""
    ev = sym_eigenvalues(np.asarray(M, dtype=float))
    return float(Lam * ev[ev > 0].sum() - lam * (-ev[ev < 0]).sum())


def pucci_minus_of(M: np.ndarray, lam: float, Lam: float) -> float:
    """Classical minimal envelope P-(M) = lam*tr(M+) - Lam*tr(M-)."""
    ev = sym_eigenvalues(np.asarray(M, dtype=float))
    return float(lam * ev[ev > 0].sum() - Lam * (-ev[ev < 0]).sum())


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise OperatorError("argument must be a square matrix")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > 1e-12 * scale:
        raise OperatorError("argument matrix is not symmetric")
    return 0.5 * (M + M.T)


def eval_operator(spec: OperatorSpec, M) -> float:
    """Evaluate F(M)."""
    M = _check_symmetric(M)
    if M.shape[0] != spec.dim:
        raise OperatorError(f"matrix dimension {M.shape[0]} != operator dimension {spec.dim}")
    k = spec.kind
    if k == "linear_trace":
        return float(-np.trace(spec.family()[0] @ M))
    if k == "pucci_plus":
        return -pucci_plus_of(M, spec.lam, spec.Lam)
    if k == "pucci_minus":
        return -pucci_minus_of(M, spec.lam, spec.Lam)
    if k == "hjb":
        return float(max(-np.trace(A @ M) for A in spec.matrices))
    if k == "isaacs":
        return float(min(max(-np.trace(A @ M) for A in row) for row in spec.matrix_table))
    if k == "transformed":
        Tinv = np.linalg.inv(spec.T)
        return eval_operator(spec.base, Tinv.T @ M @ Tinv)
    raise OperatorError(k)


def normalize_lift(T: np.ndarray) -> np.ndarray:
    """Replace the last column of T by the unit vector orthogonal to
    T@{e_d-hyperplane}, oriented toward the image half-space.  Leaves the
    boundary trace of the lifted data unchanged."""
    T = np.asarray(T, dtype=float)
    d = T.shape[0]
    tang = T[:, : d - 1]
    # Unit normal of span(tang): kernel of tang^T.
    _, _, vh = np.linalg.svd(tang.T, full_matrices=True)
    n = vh[-1]
    if n @ T[:, -1] < 0:
        n = -n
    out = T.copy()
    out[:, -1] = n
    return out


def transform_operator(spec: OperatorSpec, T, normalize: bool = False) -> OperatorSpec:
    """Conjugate F by the invertible map T: returns F_T with
    F_T(D^2 w)(z) = F(D^2 v)(Tz) for w(z) = v(Tz).

    Linear / HJB / Isaacs families conjugate explicitly (A -> T^-1 A T^-T) and
    keep their kind; Pucci is returned unchanged under orthogonal T (rotation
    invariance) and wrapped as ``transformed`` otherwise.
    """
    T = np.asarray(T, dtype=float)
    if T.shape != (spec.dim, spec.dim):
        raise OperatorError("T has wrong shape")
    if normalize:
        T = normalize_lift(T)
    s = np.linalg.svd(T, compute_uv=False)
    if s[-1] <= 1e-14 * s[0]:
        raise OperatorError("T is singular")
    cond = float(s[0] / s[-1])
    lam_T = spec.lam / float(s[0]) ** 2
    Lam_T = spec.Lam / float(s[-1]) ** 2

    orthogonal = np.allclose(T @ T.T, np.eye(spec.dim), atol=1e-12)
    if spec.kind in ("pucci_plus", "pucci_minus") and orthogonal:
        return spec
    if spec.kind in ("linear_trace", "hjb", "isaacs"):
        Tinv = np.linalg.inv(T)
        conj = lambda A: Tinv @ A @ Tinv.T
        if spec.kind == "isaacs":
            table = tuple(tuple(conj(A) for A in row) for row in spec.matrix_table)
            return OperatorSpec("isaacs", lam_T, Lam_T, spec.dim,
                                matrix_table=tuple(_as_matrix_tuple(r) for r in table),
                                cond_T=cond * spec.cond_T)
        mats = _as_matrix_tuple([conj(A) for A in spec.family()])
        return OperatorSpec(spec.kind, lam_T, Lam_T, spec.dim, matrices=mats,
                            cond_T=cond * spec.cond_T)
    if spec.kind == "transformed":
        # (F_T1)_T2 = F_(T1 T2); keep a single wrapper.
        return transform_operator(spec.base, spec.T @ T)
    return OperatorSpec("transformed", lam_T, Lam_T, spec.dim, base=spec,
                        T=T.copy(), cond_T=cond)


def classify_convexity(spec: OperatorSpec) -> str:
    """Convexity of M -> F(M): drives which concentration regime applies.

    Max-of-linear operators are convex, min-of-linear concave; either way the
    convex/concave concentration theory applies.  Only a genuine min-max
    (isaacs with at least two outer and two inner choices) is 'neither'.
    """
    k = spec.kind
    if k in ("linear_trace", "hjb", "pucci_minus"):
        return "convex"
    if k == "pucci_plus":
        return "concave"
    if k == "isaacs":
        if len(spec.matrix_table) == 1:
            return "convex"
        if all(len(row) == 1 for row in spec.matrix_table):
            return "concave"
        return "neither"
    if k == "transformed":
        return classify_convexity(spec.base)
    raise OperatorError(k)


def is_convex_or_concave(spec: OperatorSpec) -> bool:
    return classify_convexity(spec) in ("convex", "concave")


def check_family_bounds(spec: OperatorSpec) -> bool:
    """True when every family matrix A satisfies lam*I <= A <= Lam*I."""
    mats = []
    if spec.kind in ("linear_trace", "hjb"):
        mats = list(spec.family())
    elif spec.kind == "isaacs":
        mats = [A for row in spec.matrix_table for A in row]
    tol = 1e-10
    for A in mats:
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        if ev[0] < spec.lam - tol or ev[-1] > spec.Lam + tol:
            return False
    return True
