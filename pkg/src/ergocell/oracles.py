"""Closed-form and spectral oracles, independent of the finite-difference path.

Used by the test suite and the oracle_check experiment to pin expected values:
half-plane Poisson integrals for the linear Dirichlet cell, a cosine-series
strip solution for the linear Neumann cell, and radial closed forms on the
annulus.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def poisson_cell_masses(R: float, k_lo: int, k_hi: int) -> np.ndarray:
    """Half-plane (d=2) harmonic measure of the unit cells [k, k+1) x {0}
    seen from (0, R): a_k = (arctan((k+1)/R) - arctan(k/R)) / pi."""
    k = np.arange(k_lo, k_hi)
    return (np.arctan((k + 1) / R) - np.arctan(k / R)) / math.pi


def poisson_value_step(R: float, cell_values: np.ndarray, k_lo: int,
                       tail_left: float, tail_right: float) -> float:
    """Exact Poisson integral at (0, R) of piecewise-constant data: the given
    per-cell values on [k_lo, k_lo + len) and constant tails beyond."""
    n = len(cell_values)
    a = poisson_cell_masses(R, k_lo, k_lo + n)
    lo, hi = k_lo, k_lo + n
    mass_left = 0.5 + math.atan(lo / R) / math.pi      # integral over (-inf, lo)
    mass_right = 0.5 - math.atan(hi / R) / math.pi     # integral over (hi, inf)
    return float(a @ cell_values + tail_left * mass_left + tail_right * mass_right)


def poisson_value_piecewise_linear(xs: np.ndarray, vals: np.ndarray, R: float,
                                   tail_left: float, tail_right: float) -> float:
    """Exact Poisson integral at (0, R) of the piecewise-linear interpolant of
    (xs, vals), with constant tails beyond the first/last knot."""
    xs = np.asarray(xs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    total = 0.0
    atan = lambda t: math.atan(t / R)
    for i in range(len(xs) - 1):
        x0, x1 = xs[i], xs[i + 1]
        if x1 <= x0:
            raise ValueError("knots must be strictly increasing")
        v0, v1 = vals[i], vals[i + 1]
        b = (v1 - v0) / (x1 - x0)
        a0 = v0 - b * x0
        # int_x0^x1 (R/pi) (a0 + b t) / (t^2 + R^2) dt
        total += (a0 / math.pi) * (atan(x1) - atan(x0))
        total += (b * R / (2.0 * math.pi)) * math.log((x1 * x1 + R * R) / (x0 * x0 + R * R))
    total += tail_left * (0.5 + atan(xs[0]) / math.pi)
    total += tail_right * (0.5 - atan(xs[-1]) / math.pi)
    return float(total)


def poisson_single_cell(R: float, j: int = 0) -> float:
    """Response at (0, R) to data equal to 1 on [j, j+1) and 0 elsewhere."""
    return float(poisson_cell_masses(R, j, j + 1)[0])


def neumann_strip_value(R: float, L: float, cell_values: np.ndarray) -> float:
    """Linear (Laplace) Neumann cell oracle: u(0, R)/R for the strip
    0 < y < 2R with du/dy = psi on the bottom, u = 0 at the top, and data
    periodized with period 2L from the per-cell values on [-L, L).

    Fourier mode k_m = pi m / L: the profile with m'(0)=1, m(2R)=0 is
    -sinh(k (2R - y)) / (k cosh(2Rk)); the mean mode contributes the exact
    linear profile.
    """
    vals = np.asarray(cell_values, dtype=float)
    n = vals.size
    if n != int(round(2 * L)):
        raise ValueError("need one value per unit cell on [-L, L)")
    mean = float(vals.mean())
    out = -mean * R  # psi_bar * (R - 2R)
    # Fourier coefficients of the zero-mean step data: cells [x_j, x_j + 1)
    xj = -L + np.arange(n)
    dev = vals - mean
    m = np.arange(1, 8 * int(L))
    k = math.pi * m / L
    # c_m = (1/2L) int psi(t) e^{-i k t} dt over the period, per cell exact
    phase0 = np.exp(-1j * np.outer(k, xj))
    cell_int = (1 - np.exp(-1j * k)) / (1j * k)
    c = (phase0 * cell_int[:, None] @ dev) / (2 * L)
    profile = -np.sinh(k * R) / (k * np.cosh(2 * R * k))
    out += float(np.real(c * profile).sum() * 2)  # +m and -m modes at x=0
    return out / R


def annulus_radial_neumann(r: np.ndarray, r_in: float, r_out: float,
                           flux: float, inner_value: float, d: int = 2) -> np.ndarray:
    """Laplace annulus with u = inner_value on r_in and inward-normal
    derivative flux on r_out: closed-form radial solution."""
    r = np.asarray(r, dtype=float)
    if d == 2:
        B = -flux * r_out
        return inner_value + B * np.log(r / r_in)
    B = flux * r_out ** (d - 1)
    return inner_value + B / (d - 2) * (r ** (2 - d) - r_in ** (2 - d))


def disk_harmonic_mode(r: np.ndarray, theta: np.ndarray, k: int) -> np.ndarray:
    """u = r^k cos(k theta), the harmonic extension of cos(k theta)."""
    return r ** k * np.cos(k * theta)


def brute_field_mean(field_spec, seed: int, n_realizations: int, n_sites: int = 64) -> float:
    """Monte Carlo mean of the lattice field over translated sites, using only
    the keyed generator (independent of any PDE code)."""
    from .fields import sample_site
    total, count = 0.0, 0
    for i in range(n_realizations):
        f = field_spec.realize(seed, i)
        j = np.zeros((n_sites, field_spec.lattice_dim), dtype=np.int64)
        j[:, 0] = np.arange(n_sites) - n_sites // 2
        v = np.asarray(sample_site(f, j))
        total += float(v.sum())
        count += v.size
    return total / count
