"""Structured grids on boxes, disks and annuli, with monotone stencils.

Grids are axis-aligned box lattices with per-node classes; curved domains are
embedded with nearest-node boundary placement (no cut cells).  Normal
directions never rotate the grid: cell problems rotate the operator instead.

Node classes: interior nodes carry the PDE stencil; dirichlet/truncation nodes
are pinned to data; neumann nodes carry a first-order one-sided normal
derivative row (on curved boundaries the inner sample point is bilinearly
interpolated, which keeps the row a convex combination and hence monotone).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

OUTSIDE, INTERIOR, DIRICHLET, NEUMANN, TRUNCATION = -1, 0, 1, 2, 3


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """Geometry: 'box' strips/cylinders (lateral half-width L, height H along
    the last axis), 'disk'(radius) and 'annulus'(r_in, r_out)."""

    kind: str
    d: int = 2
    height: float = 0.0
    half_width: float = 0.0
    radius: float = 0.0
    r_in: float = 0.0
    r_out: float = 0.0

    def __post_init__(self):
        if self.kind not in ("box", "disk", "annulus"):
            raise GridError(f"unknown domain kind {self.kind!r}")
        if self.d not in (2, 3):
            raise GridError("grids support d in {2, 3}")
        if self.kind == "box" and (self.height <= 0 or self.half_width <= 0):
            raise GridError("box needs positive height and half-width")
        if self.kind == "disk" and self.radius <= 0:
            raise GridError("disk needs positive radius")
        if self.kind == "annulus" and not 0 < self.r_in < self.r_out:
            raise GridError("annulus needs 0 < r_in < r_out")


def _dirs_2d(n_pairs: int) -> Tuple[np.ndarray, Tuple[Tuple[int, ...], ...]]:
    dirs = np.array([(1, 0), (0, 1), (1, 1), (-1, 1), (2, 1), (-1, 2), (1, 2), (-2, 1)])
    frames = ((0, 1), (2, 3), (4, 5), (6, 7))
    if n_pairs not in (2, 4, 8):
        raise GridError("2d wide stencil supports 2, 4 or 8 direction pairs")
    keep = {2: 1, 4: 2, 8: 4}[n_pairs]
    return dirs[: n_pairs], frames[:keep]


def _dirs_3d() -> Tuple[np.ndarray, Tuple[Tuple[int, ...], ...]]:
    dirs = np.array([
        (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (1, 1, 0), (1, -1, 0),
        (1, 0, 1), (1, 0, -1),
        (0, 1, 1), (0, 1, -1),
    ])
    frames = ((0, 1, 2), (3, 4, 2), (5, 6, 1), (7, 8, 0))
    return dirs, frames


@dataclass(frozen=True)
class SchemeSpec:
    """Stencil: 'five_point' axis stencil, or 'wide_stencil' with direction
    pairs grouped into orthogonal frames (spectral approximation of the
    extremal operators).  Consistency: O(h^2) in h plus an angular-resolution
    term for the extremal combination."""

    stencil: str = "wide_stencil"
    n_pairs: int = 8
    consistency_order: Tuple[float, str] = (2.0, "plus angular resolution for extremal kinds")

    def directions(self, d: int) -> Tuple[np.ndarray, Tuple[Tuple[int, ...], ...]]:
        if self.stencil == "five_point":
            dirs = np.eye(d, dtype=np.int64)
            return dirs, (tuple(range(d)),)
        if self.stencil != "wide_stencil":
            raise GridError(f"unknown stencil {self.stencil!r}")
        if d == 2:
            return _dirs_2d(self.n_pairs)
        return _dirs_3d()


FIVE_POINT = SchemeSpec(stencil="five_point")
WIDE_DEFAULT = SchemeSpec()


class Grid:
    """Box-lattice grid with node classes and precomputed stencil tables."""

    def __init__(self, domain: DomainSpec, h: float, scheme: SchemeSpec,
                 shape, origin, class_codes, neumann_normals=None,
                 anchors=None, allow_coarse: bool = False):
        self.domain = domain
        self.h = float(h)
        self.scheme = scheme
        self.shape = tuple(int(n) for n in shape)
        self.d = len(self.shape)
        self.origin = np.asarray(origin, dtype=float)
        self.n_nodes = int(np.prod(self.shape))
        self.classes = class_codes.reshape(-1).astype(np.int8)
        self.strides = np.array(
            [int(np.prod(self.shape[k + 1:])) for k in range(self.d)], dtype=np.int64)

        self.interior_idx = np.flatnonzero(self.classes == INTERIOR)
        self.dirichlet_idx = np.flatnonzero(self.classes == DIRICHLET)
        self.neumann_idx = np.flatnonzero(self.classes == NEUMANN)
        self.truncation_idx = np.flatnonzero(self.classes == TRUNCATION)
        if not allow_coarse and self._axis_extent() < 4:
            raise GridError("degenerate domain: fewer than 4 interior nodes per axis")

        self._anchors = anchors or {}
        self._neumann_normals = neumann_normals
        self._build_stencil_tables()
        self._build_neumann_rows()

    # -- indexing helpers -------------------------------------------------
    def _axis_extent(self):
        if self.interior_idx.size == 0:
            raise GridError("degenerate domain: no interior nodes")
        multi = np.array(np.unravel_index(self.interior_idx, self.shape))
        return (multi.max(axis=1) - multi.min(axis=1)).min() + 1

    def node_coords(self, idx) -> np.ndarray:
        multi = np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)
        return self.origin + self.h * multi

    def flat_index(self, multi) -> np.ndarray:
        return np.asarray(multi, dtype=np.int64) @ self.strides

    def anchor_points(self, which: str) -> np.ndarray:
        """Physical points where boundary data is evaluated for the given
        node family ('dirichlet' | 'neumann' | 'truncation')."""
        if which in self._anchors:
            return self._anchors[which]
        idx = {"dirichlet": self.dirichlet_idx, "neumann": self.neumann_idx,
               "truncation": self.truncation_idx}[which]
        return self.node_coords(idx)

    @property
    def neumann_normals(self) -> np.ndarray:
        if self._neumann_normals is not None:
            return self._neumann_normals
        nu = np.zeros((self.neumann_idx.size, self.d))
        nu[:, -1] = 1.0  # box strips: inward normal along the vertical axis
        return nu

    # -- stencil tables ----------------------------------------------------
    def _build_stencil_tables(self):
        dirs, frames = self.scheme.directions(self.d)
        self.dirs = dirs
        self.frames = frames
        self.inv_len2 = 1.0 / (dirs.astype(float) ** 2).sum(axis=1)
        n_dirs = len(dirs)
        n_int = self.interior_idx.size
        multi = np.array(np.unravel_index(self.interior_idx, self.shape)).T  # (n_int, d)

        nbp = np.empty((n_dirs, n_int), dtype=np.int64)
        nbm = np.empty((n_dirs, n_int), dtype=np.int64)
        avail = np.ones((n_dirs, n_int), dtype=bool)
        shape_arr = np.asarray(self.shape)
        for k, v in enumerate(dirs):
            for sign, table in ((1, nbp), (-1, nbm)):
                q = multi + sign * v
                inside = np.all((q >= 0) & (q < shape_arr), axis=1)
                flat = np.clip(q, 0, shape_arr - 1) @ self.strides
                ok = inside & (self.classes[flat] != OUTSIDE)
                avail[k] &= ok
                # masked-out entries point at the node itself; the weight mask
                # guarantees they are never read with nonzero coefficient
                table[k] = np.where(ok, flat, self.interior_idx)
        self.nbp, self.nbm = nbp, nbm
        self.dir_avail = avail
        frame_avail = np.ones((len(frames), n_int), dtype=bool)
        for fi, fr in enumerate(frames):
            for k in fr:
                frame_avail[fi] &= avail[k]
        if not frame_avail[0].all():
            raise GridError("primary stencil frame missing neighbors at an interior node")
        self.frame_avail = frame_avail

    def _build_neumann_rows(self):
        """First-order normal-derivative rows: residual has the form
        (u(x) - sum_i c_i u(q_i)) / t + psi(anchor), with c_i >= 0, sum c_i = 1."""
        n = self.neumann_idx.size
        max_pts = 2 ** self.d
        self.neu_cols = np.full((n, max_pts), -1, dtype=np.int64)
        self.neu_wts = np.zeros((n, max_pts))
        self.neu_step = np.full(n, self.h)
        if n == 0:
            return
        normals = self.neumann_normals
        coords = self.node_coords(self.neumann_idx)
        shape_arr = np.asarray(self.shape)
        axis_aligned = np.all(np.abs(np.abs(normals) - np.eye(self.d)[np.argmax(np.abs(normals), axis=1)]) < 1e-12, axis=1)
        for i in range(n):
            nu = normals[i]
            if axis_aligned[i]:
                step_multi = np.rint(nu).astype(np.int64)
                multi = np.array(np.unravel_index(self.neumann_idx[i], self.shape))
                q = multi + step_multi
                self.neu_cols[i, 0] = int(q @ self.strides)
                self.neu_wts[i, 0] = 1.0
                self.neu_step[i] = self.h
                continue
            for mult in (2.0, 3.0, 4.0):
                t = mult * self.h
                p = coords[i] + t * nu
                base = np.floor((p - self.origin) / self.h).astype(np.int64)
                if np.any(base < 0) or np.any(base + 1 >= shape_arr):
                    continue
                frac = (p - self.origin) / self.h - base
                ok = True
                cols, wts = [], []
                for corner in range(2 ** self.d):
                    off = np.array([(corner >> ax) & 1 for ax in range(self.d)])
                    q = base + off
                    fq = int(q @ self.strides)
                    w = float(np.prod(np.where(off == 1, frac, 1.0 - frac)))
                    if w <= 1e-14:
                        continue
                    if self.classes[fq] == OUTSIDE or fq == self.neumann_idx[i]:
                        ok = False
                        break
                    cols.append(fq)
                    wts.append(w)
                if ok:
                    self.neu_cols[i, : len(cols)] = cols
                    self.neu_wts[i, : len(wts)] = wts
                    self.neu_step[i] = t
                    break
            else:
                raise GridError("could not place a monotone Neumann row")


def build_box_grid(d: int, half_width: float, height: float, h: float,
                   scheme: SchemeSpec = WIDE_DEFAULT,
                   bottom: str = "dirichlet", allow_coarse: bool = False) -> Grid:
    """Box [-L, L]^(d-1) x [0, H]; bottom face dirichlet or neumann, top face
    dirichlet, lateral faces artificial truncation (lateral wins at corners)."""
    L, H = float(half_width), float(height)
    nl = int(round(L / h))
    nv = int(round(H / h))
    if nl < 1 or nv < 1:
        raise GridError("degenerate box: dimensions smaller than h")
    if abs(nl * h - L) > 0.01 * L or abs(nv * h - H) > 0.01 * H:
        raise GridError("h must divide the box dimensions within 1%")
    shape = (2 * nl + 1,) * (d - 1) + (nv + 1,)
    origin = np.array([-nl * h] * (d - 1) + [0.0])
    codes = np.full(shape, INTERIOR, dtype=np.int8)
    bottom_code = DIRICHLET if bottom == "dirichlet" else NEUMANN
    codes[..., 0] = bottom_code
    # the top is a true boundary for the Neumann strip (data 0 there) but an
    # artificial truncation row for half-space Dirichlet cells
    codes[..., -1] = DIRICHLET if bottom == "neumann" else TRUNCATION
    for ax in range(d - 1):
        sl = [slice(None)] * d
        sl[ax] = 0
        codes[tuple(sl)] = TRUNCATION
        sl[ax] = -1
        codes[tuple(sl)] = TRUNCATION
    dom = DomainSpec("box", d=d, height=H, half_width=L)
    return Grid(dom, h, scheme, shape, origin, codes, allow_coarse=allow_coarse)


def _build_radial_grid(domain: DomainSpec, h: float, scheme: SchemeSpec) -> Grid:
    d = domain.d
    r_hi = domain.radius if domain.kind == "disk" else domain.r_out
    n = int(np.ceil(r_hi / h)) + 2
    shape = (2 * n + 1,) * d
    origin = np.array([-n * h] * d)
    axes = [origin[k] + h * np.arange(shape[k]) for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    rr = np.sqrt(sum(m ** 2 for m in mesh))
    if domain.kind == "disk":
        inside = rr <= domain.radius - 0.5 * h
    else:
        inside = (rr >= domain.r_in + 0.5 * h) & (rr <= domain.r_out - 0.5 * h)
    codes = np.full(shape, OUTSIDE, dtype=np.int8)
    codes[inside] = INTERIOR
    # boundary nodes: outside nodes with an axis neighbor inside
    near = np.zeros(shape, dtype=bool)
    for ax in range(d):
        for sh in (1, -1):
            near |= np.roll(inside, sh, axis=ax)
    bdy = near & ~inside
    coords = np.stack(mesh, axis=-1)
    rb = rr[bdy]
    if domain.kind == "disk":
        codes[bdy] = DIRICHLET
    else:
        mid = 0.5 * (domain.r_in + domain.r_out)
        inner = bdy & (rr < mid)
        outer = bdy & (rr >= mid)
        codes[inner] = DIRICHLET
        codes[outer] = NEUMANN

    flat_codes = codes.reshape(-1)
    coords_flat = coords.reshape(-1, d)
    anchors = {}
    didx = np.flatnonzero(flat_codes == DIRICHLET)
    if didx.size:
        x = coords_flat[didx]
        r_anchor = domain.radius if domain.kind == "disk" else domain.r_in
        anchors["dirichlet"] = x * (r_anchor / np.linalg.norm(x, axis=1))[:, None]
    nidx = np.flatnonzero(flat_codes == NEUMANN)
    normals = None
    if nidx.size:
        x = coords_flat[nidx]
        rn = np.linalg.norm(x, axis=1)
        anchors["neumann"] = x * (domain.r_out / rn)[:, None]
        normals = -x / rn[:, None]  # inward normal of the outer circle
    return Grid(domain, h, scheme, shape, origin, codes,
                neumann_normals=normals, anchors=anchors)


def build_grid(domain: DomainSpec, h: float, scheme: SchemeSpec = WIDE_DEFAULT,
               bottom: str = "dirichlet") -> Grid:
    if h <= 0:
        raise GridError("h must be positive")
    if domain.kind == "box":
        return build_box_grid(domain.d, domain.half_width, domain.height, h,
                              scheme, bottom=bottom)
    return _build_radial_grid(domain, h, scheme)


@dataclass
class BoundaryData:
    """Per-node boundary values aligned with the grid's node families."""

    dirichlet: np.ndarray
    neumann: np.ndarray
    truncation: np.ndarray

    @staticmethod
    def from_callables(grid: Grid, dirichlet: Optional[Callable] = None,
                       neumann: Optional[Callable] = None,
                       truncation: Optional[Callable] = None) -> "BoundaryData":
        def ev(fn, which, idx):
            if idx.size == 0:
                return np.zeros(0)
            if fn is None:
                raise GridError(f"missing boundary data for {which} nodes")
            return np.asarray(fn(grid.anchor_points(which)), dtype=float).reshape(-1)

        return BoundaryData(
            dirichlet=ev(dirichlet, "dirichlet", grid.dirichlet_idx),
            neumann=ev(neumann, "neumann", grid.neumann_idx),
            truncation=ev(truncation, "truncation", grid.truncation_idx),
        )

    def scale(self) -> float:
        vals = [np.abs(a).max() for a in (self.dirichlet, self.neumann, self.truncation)
                if a.size]
        return max(vals) if vals else 1.0
