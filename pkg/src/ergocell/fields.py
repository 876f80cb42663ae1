"""Stationary lattice random fields for boundary data.

Site values are a pure function of (master_seed, realization_index, absolute
site index) through a splitmix64-style keyed hash, so translation acts exactly
(shifting the lattice offset commutes bitwise with shifting the query point)
and evaluation order / parallel schedule cannot change anything.

Mixing and log-Sobolev certificates are produced constructively from the
construction, never estimated from samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

U64 = np.uint64
_GAMMA = U64(0x9E3779B97F4A7C15)
_M1 = U64(0xBF58476D1CE4E5B9)
_M2 = U64(0x94D049BB133111EB)

SITE_LAWS = ("bernoulli", "uniform", "gaussian")
CONSTRUCTIONS = ("iid_checkerboard", "mollified_checkerboard", "m_dependent", "gaussian_ma")


class FieldError(ValueError):
    pass


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> U64(30))) * _M1
    z = (z ^ (z >> U64(27))) * _M2
    return z ^ (z >> U64(31))


def _feed(state: np.ndarray, word: np.ndarray) -> np.ndarray:
    return _mix64((state + _GAMMA) ^ word)


def keyed_uniform(seed: int, stream: int, index: int, sites: np.ndarray) -> np.ndarray:
    """Uniform(0,1) value per lattice site, shape sites.shape[:-1].

    sites: integer array (..., n) of absolute site coordinates.
    """
    sites = np.asarray(sites, dtype=np.int64)
    base = sites.shape[:-1]
    with np.errstate(over="ignore"):
        h = np.full(base, U64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        h = _feed(h, U64(stream & 0xFFFFFFFFFFFFFFFF))
        h = _feed(h, U64(index & 0xFFFFFFFFFFFFFFFF))
        for axis in range(sites.shape[-1]):
            h = _feed(h, sites[..., axis].astype(np.int64).view(np.uint64))
        h = _mix64(h)
    return ((h >> U64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


@dataclass(frozen=True)
class SiteLaw:
    kind: str
    p: float = 0.5
    a: float = 0.0
    b: float = 1.0
    mean: float = 0.0
    sd: float = 1.0
    clip: Optional[float] = None  # gaussian only; default 3*sd

    def __post_init__(self):
        if self.kind not in SITE_LAWS:
            raise FieldError(f"unknown site law {self.kind!r}")
        if self.kind in ("bernoulli", "uniform") and not self.a <= self.b:
            raise FieldError("site law needs a <= b")
        if self.kind == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise FieldError("bernoulli p outside [0,1]")

    @property
    def clip_level(self) -> float:
        return self.clip if self.clip is not None else 3.0 * self.sd

    def bound(self) -> float:
        if self.kind in ("bernoulli", "uniform"):
            return max(abs(self.a), abs(self.b))
        return self.clip_level

    def sample(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "bernoulli":
            # p is the probability of the upper value b
            return np.where(u < self.p, self.b, self.a)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        x = self.mean + self.sd * ndtri(u)
        c = self.clip_level
        return np.clip(x, -c, c)

    def exact_mean(self) -> float:
        if self.kind == "bernoulli":
            return self.a + self.p * (self.b - self.a)
        if self.kind == "uniform":
            return 0.5 * (self.a + self.b)
        return _clipped_gaussian_moments(self.mean, self.sd, self.clip_level)[0]

    def exact_var(self) -> float:
        if self.kind == "bernoulli":
            return self.p * (1.0 - self.p) * (self.b - self.a) ** 2
        if self.kind == "uniform":
            return (self.b - self.a) ** 2 / 12.0
        return _clipped_gaussian_moments(self.mean, self.sd, self.clip_level)[1]

    def has_lsi(self) -> bool:
        return self.kind in ("uniform", "gaussian")

    def lsi_constant(self) -> Optional[float]:
        # Convention: Ent_m(f^2) <= (1/(2 rho)) * int |grad f|^2 dm.
        if self.kind == "gaussian":
            return 1.0 / (4.0 * self.sd ** 2)  # clipping is 1-Lipschitz, keeps rho
        if self.kind == "uniform":
            # uniform(a,b) = pushforward of N(0,1) by a + (b-a)*Phi, |phi'|max = (b-a)/sqrt(2 pi)
            return math.pi / (2.0 * (self.b - self.a) ** 2)
        return None


def _clipped_gaussian_moments(mu: float, sd: float, c: float) -> Tuple[float, float]:
    """Mean and variance of clip(N(mu, sd^2), -c, c)."""
    lo, hi = (-c - mu) / sd, (c - mu) / sd
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    Flo, Fhi = float(ndtr(lo)), float(ndtr(hi))
    mid = Fhi - Flo
    # E X and E X^2 for the censored variable
    ex = -c * Flo + c * (1.0 - Fhi) + mu * mid - sd * (phi(hi) - phi(lo))
    t_lo = lo * phi(lo) if math.isfinite(lo) else 0.0
    t_hi = hi * phi(hi) if math.isfinite(hi) else 0.0
    ex2_mid = (mu ** 2 + sd ** 2) * mid - sd ** 2 * (t_hi - t_lo) - 2.0 * mu * sd * (phi(hi) - phi(lo))
    ex2 = c * c * (Flo + 1.0 - Fhi) + ex2_mid
    return ex, ex2 - ex * ex


@dataclass(frozen=True)
class FieldSpec:
    lattice_dim: int
    law: SiteLaw
    construction: str = "iid_checkerboard"
    width: float = 1.0          # mollified_checkerboard
    m: int = 0                  # m_dependent window half-width
    weights: Tuple[float, ...] = ()   # gaussian_ma, centered odd-length support

    def __post_init__(self):
        if self.construction not in CONSTRUCTIONS:
            raise FieldError(f"unknown construction {self.construction!r}")
        if self.lattice_dim < 1:
            raise FieldError("lattice_dim must be >= 1")
        if self.construction == "mollified_checkerboard" and not 0.0 < self.width <= 1.0:
            raise FieldError("mollifier width must be in (0, 1]")
        if self.construction == "m_dependent" and self.m < 0:
            raise FieldError("m must be >= 0")
        if self.construction == "gaussian_ma":
            if len(self.weights) == 0 or len(self.weights) % 2 != 1:
                raise FieldError("gaussian_ma needs an odd-length weight list")
            if self.law.kind != "gaussian":
                raise FieldError("gaussian_ma needs a gaussian site law")

    def bound(self) -> float:
        # every construction combines site values by convex/clipped operations
        return self.law.bound()

    def realize(self, master_seed: int, realization_index: int) -> "FieldRealization":
        return FieldRealization(self, master_seed, realization_index,
                                (0,) * self.lattice_dim)


@dataclass(frozen=True)
class FieldRealization:
    spec: FieldSpec
    master_seed: int
    realization_index: int
    offset: Tuple[int, ...]

    @property
    def bound(self) -> float:
        return self.spec.bound()


def translate(f: FieldRealization, k) -> FieldRealization:
    k = tuple(int(x) for x in np.atleast_1d(k))
    if len(k) != f.spec.lattice_dim:
        raise FieldError("translation vector has wrong dimension")
    return replace(f, offset=tuple(a + b for a, b in zip(f.offset, k)))


def _underlying(f: FieldRealization, sites: np.ndarray, stream: int) -> np.ndarray:
    u = keyed_uniform(f.master_seed, stream, f.realization_index, sites)
    return f.spec.law.sample(u)


def sample_site(f: FieldRealization, j) -> np.ndarray:
    """Value X_{j + offset}; j is an integer array (..., n) or a single index."""
    spec = f.spec
    j = np.asarray(j, dtype=np.int64)
    scalar = j.ndim <= 1
    if j.ndim == 0:
        j = j.reshape(1, 1)
    elif j.ndim == 1 and spec.lattice_dim == 1 and j.shape[0] != 1:
        j = j.reshape(-1, 1)
        scalar = False
    elif j.ndim == 1:
        j = j.reshape(1, -1)
    if j.shape[-1] != spec.lattice_dim:
        raise FieldError("site index has wrong dimension")
    j = j + np.asarray(f.offset, dtype=np.int64)

    if spec.construction in ("iid_checkerboard", "mollified_checkerboard"):
        vals = _underlying(f, j, stream=0)
    elif spec.construction == "m_dependent":
        m, n = spec.m, spec.lattice_dim
        grids = np.meshgrid(*([np.arange(-m, m + 1)] * n), indexing="ij")
        offs = np.stack([g.ravel() for g in grids], axis=-1)  # ((2m+1)^n, n)
        stacked = j[..., None, :] + offs  # (..., w, n)
        vals = _underlying(f, stacked, stream=1).mean(axis=-1)
    else:  # gaussian_ma: weights along the first lattice axis, then clip
        w = np.asarray(spec.weights, dtype=float)
        m = (len(w) - 1) // 2
        offs = np.zeros((len(w), spec.lattice_dim), dtype=np.int64)
        offs[:, 0] = np.arange(-m, m + 1)
        stacked = j[..., None, :] + offs
        raw = _underlying(f, stacked, stream=1)
        c = spec.law.clip_level
        vals = np.clip(raw @ w, -c, c)
    return float(vals.reshape(-1)[0]) if scalar and vals.size == 1 else vals


def _axis_weight(t: np.ndarray, width: float) -> np.ndarray:
    """Trapezoidal partition-of-unity weight on node offsets: flat 1 for
    |t| <= (1-w)/2, linear ramp down to 0 at |t| = (1+w)/2."""
    return np.clip(((1.0 + width) / 2.0 - np.abs(t)) / width, 0.0, 1.0)


def eval_field(f: FieldRealization, y) -> np.ndarray:
    """psi(y): piecewise constant on lattice cells, or the mollified
    (trapezoid partition of unity on lattice nodes) Lipschitz variant."""
    spec = f.spec
    y = np.asarray(y, dtype=float)
    scalar = y.ndim <= 1
    if y.ndim == 0:
        y = y.reshape(1, 1)
    elif y.ndim == 1 and spec.lattice_dim == 1 and y.shape[0] != 1:
        y = y.reshape(-1, 1)
        scalar = False
    elif y.ndim == 1:
        y = y.reshape(1, -1)
    if y.shape[-1] != spec.lattice_dim:
        raise FieldError("point has wrong dimension")

    if spec.construction != "mollified_checkerboard":
        vals = sample_site(f, np.floor(y).astype(np.int64))
    else:
        n = spec.lattice_dim
        base = np.floor(y).astype(np.int64)
        frac = y - base
        total = np.zeros(y.shape[:-1])
        corners = np.meshgrid(*([np.array([0, 1])] * n), indexing="ij")
        corners = np.stack([c.ravel() for c in corners], axis=-1)  # (2^n, n)
        for corner in corners:
            wgt = np.ones(y.shape[:-1])
            for ax in range(n):
                wgt = wgt * _axis_weight(frac[..., ax] - corner[ax], spec.width)
            if np.any(wgt > 0):
                total = total + wgt * np.asarray(sample_site(f, base + corner))
        vals = total
    return float(np.reshape(vals, -1)[0]) if scalar and np.size(vals) == 1 else vals


def lipschitz_bound(spec: FieldSpec) -> Optional[float]:
    """Uniform Lipschitz constant of eval_field, when one exists."""
    if spec.construction == "mollified_checkerboard":
        return 2.0 * spec.bound() * spec.lattice_dim / spec.width
    return None


@dataclass(frozen=True)
class MixingCertificate:
    """Constructive phi-mixing certificate for the block (site) field.

    finite range r0: phi(r) = 1 for r < r0 and 0 for r >= r0, so the mixing
    integral over rate^(1/2) * r^(pde_dim-2) is r0^(pde_dim-1)/(pde_dim-1).
    """

    range: float
    lsi_flag: bool
    lsi_constant: Optional[float]

    def phi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.where(r < self.range, 1.0, 0.0)

    def rho(self, pde_dim: int) -> float:
        if pde_dim < 2:
            raise FieldError("pde dimension must be >= 2")
        if self.range <= 0.0:
            return 0.0
        return self.range ** (pde_dim - 1) / (pde_dim - 1)


def certificate(spec: FieldSpec) -> MixingCertificate:
    cons = spec.construction
    if cons == "iid_checkerboard":
        r0 = 0.0
    elif cons == "mollified_checkerboard":
        # value on cell j involves nodes j and j+1: blocks 2 apart are independent
        r0 = 2.0
    elif cons == "m_dependent":
        r0 = 2.0 * spec.m + 1.0
    else:
        m = (len(spec.weights) - 1) // 2
        r0 = 2.0 * m + 1.0

    lsi = spec.law.has_lsi()
    rho = spec.law.lsi_constant()
    if lsi and cons == "m_dependent":
        pass  # window-averaging is an l2-contraction, constant preserved
    elif lsi and cons == "gaussian_ma":
        s = sum(abs(w) for w in spec.weights)
        rho = rho / (s * s)  # linear map with l2 operator norm <= |w|_1, then 1-Lipschitz clip
    return MixingCertificate(range=r0, lsi_flag=lsi, lsi_constant=rho if lsi else None)
