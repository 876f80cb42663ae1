"""Log-log rate fits with bootstrap confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    stderr: float
    r2: float
    ci_lo: float
    ci_hi: float
    n_points: int


def fit_exponent(points: Sequence[Tuple[float, float]], n_bootstrap: int = 400,
                 seed: int = 0) -> RateFit:
    """Ordinary least squares of log(value) on log(R); value must be positive.

    The bootstrap CI resamples points with replacement (percentile 2.5/97.5).
    """
    pts = [(float(r), float(v)) for r, v in points]
    if len(pts) < 3:
        raise FitError("need at least 3 points to fit a rate")
    if any(v <= 0 for _, v in pts):
        raise FitError("rate fit needs positive values")
    x = np.log([r for r, _ in pts])
    y = np.log([v for _, v in pts])
    slope, intercept, stderr, r2 = _ols(x, y)

    rng = np.random.default_rng(seed)
    n = len(pts)
    slopes = []
    for _ in range(n_bootstrap):
        idx = rng.integers(0, n, size=n)
        if np.unique(x[idx]).size < 2:
            continue
        s, *_ = _ols(x[idx], y[idx])
        slopes.append(s)
    if slopes:
        lo, hi = np.percentile(slopes, [2.5, 97.5])
    else:  # degenerate resampling; fall back to the point estimate
        lo = hi = slope
    return RateFit(slope, intercept, stderr, r2, float(lo), float(hi), n)


def _ols(x: np.ndarray, y: np.ndarray):
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    dof = max(n - 2, 1)
    stderr = float(np.sqrt((resid ** 2).sum() / dof / sxx))
    sst = ((y - ym) ** 2).sum()
    r2 = 1.0 - float((resid ** 2).sum() / sst) if sst > 0 else 1.0
    return float(slope), float(intercept), stderr, r2
