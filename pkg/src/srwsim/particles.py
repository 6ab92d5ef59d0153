"""Particle storage, lattice initialization, and uniform-grid neighbor search.

The neighbor structure is a cell-linked uniform grid: cells are at least as
large as the listed radius, so a one-ring (3x3) scan is a strict superset of
every pair within that radius; exact distances are filtered afterwards.  The
solver lists neighbors with a small "skin" margin on top of the kernel
support so the lists survive a few steps between rebuilds; the public query
always filters down to the exact strict ``r < 2h`` set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .constitutive import MaterialParams
from .errors import NumericalAbort

KIND_SOIL = 0
KIND_STATIC = 1

#: h = HCOEF * lattice spacing (uniform, constant in time).
HCOEF = 1.2

#: Runaway abort: any particle farther than this many domain widths outside
#: the reference bounding box kills the run.
RUNAWAY_FACTOR = 10.0


@dataclass
class ParticleSet:
    """Struct-of-arrays state of all SPH particles (soil + static boundary)."""

    ids: np.ndarray        # (n,) int64, unique, stable
    kind: np.ndarray       # (n,) uint8, KIND_SOIL | KIND_STATIC
    pos: np.ndarray        # (n, 2) float64, m
    vel: np.ndarray        # (n, 2) float64, m/s
    rho: np.ndarray        # (n,) float64, kg/m^3
    mass: np.ndarray       # (n,) float64, kg per unit out-of-plane length
    stress: np.ndarray     # (n, 4) float64, Pa: sxx, syy, szz, sxy
    eps_p: np.ndarray      # (n,) float64, accumulated plastic strain
    h: float               # smoothing length, m (uniform)
    spacing: float         # lattice spacing the set was built with, m

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def n_soil(self) -> int:
        return int(np.count_nonzero(self.kind == KIND_SOIL))

    def total_mass(self) -> float:
        return float(np.sum(self.mass))

    def validate(self):
        if np.any(self.rho <= 0.0) or np.any(self.mass <= 0.0):
            raise ValueError("density and mass must be positive")
        if len(np.unique(self.ids)) != self.n:
            raise ValueError("particle ids must be unique")

    @staticmethod
    def empty(spacing: float, h: float | None = None) -> "ParticleSet":
        h = HCOEF * spacing if h is None else h
        return ParticleSet(
            ids=np.empty(0, np.int64), kind=np.empty(0, np.uint8),
            pos=np.empty((0, 2)), vel=np.empty((0, 2)),
            rho=np.empty(0), mass=np.empty(0),
            stress=np.empty((0, 4)), eps_p=np.empty(0),
            h=h, spacing=spacing)

    @staticmethod
    def concatenate(sets: list["ParticleSet"]) -> "ParticleSet":
        sets = [s for s in sets if s.n > 0]
        if not sets:
            raise ValueError("nothing to concatenate")
        h = sets[0].h
        spacing = sets[0].spacing
        for s in sets[1:]:
            if s.h != h:
                raise ValueError("all particle sets must share one smoothing length")
        out = ParticleSet(
            ids=np.concatenate([s.ids for s in sets]),
            kind=np.concatenate([s.kind for s in sets]),
            pos=np.vstack([s.pos for s in sets]),
            vel=np.vstack([s.vel for s in sets]),
            rho=np.concatenate([s.rho for s in sets]),
            mass=np.concatenate([s.mass for s in sets]),
            stress=np.vstack([s.stress for s in sets]),
            eps_p=np.concatenate([s.eps_p for s in sets]),
            h=h, spacing=spacing)
        # re-id so ids stay unique after merging
        out.ids = np.arange(out.n, dtype=np.int64)
        return out


def points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd (ray casting) containment test, vectorized over points."""
    x = pts[:, 0]
    y = pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    nv = len(poly)
    for i in range(nv):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % nv]
        crosses = (y1 > y) != (y2 > y)
        if not np.any(crosses):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (x2 - x1) * (y - y1) / (y2 - y1) + x1
        inside ^= crosses & (x < x_cross)
    return inside


def lattice_points(region: np.ndarray, spacing: float) -> np.ndarray:
    """Square-lattice points (offset-centered, anchored at the origin) inside
    a simple polygon."""
    region = np.asarray(region, dtype=float)
    if region.ndim != 2 or region.shape[0] < 3 or region.shape[1] != 2:
        raise ValueError("region must be a polygon with at least 3 vertices")
    if spacing <= 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    xmin, ymin = region.min(axis=0)
    xmax, ymax = region.max(axis=0)
    i0 = math.floor((xmin - 0.5 * spacing) / spacing)
    i1 = math.ceil((xmax - 0.5 * spacing) / spacing)
    j0 = math.floor((ymin - 0.5 * spacing) / spacing)
    j1 = math.ceil((ymax - 0.5 * spacing) / spacing)
    xs = (np.arange(i0, i1 + 1) + 0.5) * spacing
    ys = (np.arange(j0, j1 + 1) + 0.5) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return pts[points_in_polygon(pts, region)]


def lattice_init(region: np.ndarray, spacing: float, material: MaterialParams,
                 kind: int = KIND_SOIL,
                 gravity_magnitude: float = 9.81) -> ParticleSet:
    """Fill a polygon with lattice particles of the given material.

    Mass per particle is rho0 * spacing^2 per unit out-of-plane length,
    with rho0 = unit_weight / g.
    """
    pts = lattice_points(region, spacing)
    if len(pts) == 0:
        raise ValueError("region contains no lattice points (empty region)")
    n = len(pts)
    rho0 = material.density(gravity_magnitude)
    return ParticleSet(
        ids=np.arange(n, dtype=np.int64),
        kind=np.full(n, kind, np.uint8),
        pos=np.ascontiguousarray(pts),
        vel=np.zeros((n, 2)),
        rho=np.full(n, rho0),
        mass=np.full(n, rho0 * spacing * spacing),
        stress=np.zeros((n, 4)),
        eps_p=np.zeros(n),
        h=HCOEF * spacing,
        spacing=spacing)


@njit(cache=True)
def _assign_cells(pos, cell, xmin, ymin, ncx, ncy):
    n = pos.shape[0]
    ncells = ncx * ncy
    counts = np.zeros(ncells + 1, np.int64)
    cid = np.empty(n, np.int64)
    for i in range(n):
        cx = int((pos[i, 0] - xmin) / cell)
        cy = int((pos[i, 1] - ymin) / cell)
        if cx < 0:
            cx = 0
        elif cx >= ncx:
            cx = ncx - 1
        if cy < 0:
            cy = 0
        elif cy >= ncy:
            cy = ncy - 1
        c = cy * ncx + cx
        cid[i] = c
        counts[c + 1] += 1
    for c in range(1, ncells + 1):
        counts[c] += counts[c - 1]
    order = np.empty(n, np.int64)
    fill = counts[:-1].copy()
    for i in range(n):  # stable: ascending particle index within each cell
        c = cid[i]
        order[fill[c]] = i
        fill[c] += 1
    return counts, order


@njit(cache=True)
def _build_csr(pos, cell, xmin, ymin, ncx, ncy, cell_start, cell_order, rlist):
    """Two-pass CSR neighbor list: all pairs with r < rlist (strict)."""
    n = pos.shape[0]
    r2 = rlist * rlist
    cnt = np.zeros(n + 1, np.int64)
    for a in range(n):
        xa = pos[a, 0]
        ya = pos[a, 1]
        cx = int((xa - xmin) / cell)
        cy = int((ya - ymin) / cell)
        m = 0
        for dy in range(-1, 2):
            gy = cy + dy
            if gy < 0 or gy >= ncy:
                continue
            for dx in range(-1, 2):
                gx = cx + dx
                if gx < 0 or gx >= ncx:
                    continue
                c = gy * ncx + gx
                for k in range(cell_start[c], cell_start[c + 1]):
                    b = cell_order[k]
                    if b == a:
                        continue
                    ddx = xa - pos[b, 0]
                    ddy = ya - pos[b, 1]
                    if ddx * ddx + ddy * ddy < r2:
                        m += 1
        cnt[a + 1] = m
    for a in range(1, n + 1):
        cnt[a] += cnt[a - 1]
    idx = np.empty(cnt[n], np.int32)
    for a in range(n):
        xa = pos[a, 0]
        ya = pos[a, 1]
        cx = int((xa - xmin) / cell)
        cy = int((ya - ymin) / cell)
        p = cnt[a]
        for dy in range(-1, 2):
            gy = cy + dy
            if gy < 0 or gy >= ncy:
                continue
            for dx in range(-1, 2):
                gx = cx + dx
                if gx < 0 or gx >= ncx:
                    continue
                c = gy * ncx + gx
                for k in range(cell_start[c], cell_start[c + 1]):
                    b = cell_order[k]
                    if b == a:
                        continue
                    ddx = xa - pos[b, 0]
                    ddy = ya - pos[b, 1]
                    if ddx * ddx + ddy * ddy < r2:
                        idx[p] = b
                        p += 1
    return cnt, idx


@dataclass
class NeighborGrid:
    """Uniform-grid acceleration structure + CSR neighbor lists.

    ``support`` is the exact query radius (2h); ``rlist`` >= support is the
    listed radius (support + skin).  Queries through :func:`neighbors`
    filter the stored list down to the strict ``r < support`` set using the
    particle set's current positions.
    """

    support: float
    rlist: float
    debug: bool = False
    cell: float = field(init=False, default=0.0)
    xmin: float = 0.0
    ymin: float = 0.0
    ncx: int = 0
    ncy: int = 0
    cell_start: np.ndarray | None = None
    cell_order: np.ndarray | None = None
    nbr_start: np.ndarray | None = None
    nbr_idx: np.ndarray | None = None
    checksum: float = 0.0
    ref_bbox: tuple | None = None

    def __post_init__(self):
        if self.rlist < self.support:
            raise ValueError("listed radius must cover the support radius")
        self.cell = self.rlist

    @staticmethod
    def build(ps: ParticleSet, skin: float = 0.0, debug: bool = False) -> "NeighborGrid":
        grid = NeighborGrid(support=2.0 * ps.h, rlist=2.0 * ps.h + skin, debug=debug)
        return rebuild(grid, ps)


def rebuild(grid: NeighborGrid, ps: ParticleSet) -> NeighborGrid:
    """Recompute cell assignment and CSR neighbor lists for current positions."""
    return rebuild_positions(grid, ps.pos)


def rebuild_positions(grid: NeighborGrid, pos: np.ndarray) -> NeighborGrid:
    """Rebuild over a bare position array (the solver passes the particle
    set augmented with wall-mirror ghosts)."""
    if pos.shape[0] == 0:
        grid.cell_start = np.zeros(1, np.int64)
        grid.cell_order = np.empty(0, np.int64)
        grid.nbr_start = np.zeros(1, np.int64)
        grid.nbr_idx = np.empty(0, np.int32)
        grid.checksum = 0.0
        return grid
    if not np.all(np.isfinite(pos)):
        bad = int(np.where(~np.isfinite(pos).all(axis=1))[0][0])
        raise NumericalAbort("non-finite particle position", particle=bad)
    xmin = float(pos[:, 0].min())
    xmax = float(pos[:, 0].max())
    ymin = float(pos[:, 1].min())
    ymax = float(pos[:, 1].max())
    if grid.ref_bbox is None:
        grid.ref_bbox = (xmin, xmax, ymin, ymax)
    else:
        rx0, rx1, ry0, ry1 = grid.ref_bbox
        span = RUNAWAY_FACTOR * max(rx1 - rx0, ry1 - ry0, grid.cell)
        if (xmin < rx0 - span or xmax > rx1 + span
                or ymin < ry0 - span or ymax > ry1 + span):
            d = np.abs(pos - [[0.5 * (rx0 + rx1), 0.5 * (ry0 + ry1)]]).max(axis=1)
            raise NumericalAbort("runaway particle left the simulation domain",
                                 particle=int(np.argmax(d)))
    cell = grid.cell
    grid.xmin = xmin
    grid.ymin = ymin
    grid.ncx = max(1, int((xmax - xmin) / cell) + 1)
    grid.ncy = max(1, int((ymax - ymin) / cell) + 1)
    grid.cell_start, grid.cell_order = _assign_cells(
        pos, cell, grid.xmin, grid.ymin, grid.ncx, grid.ncy)
    grid.nbr_start, grid.nbr_idx = _build_csr(
        pos, cell, grid.xmin, grid.ymin, grid.ncx, grid.ncy,
        grid.cell_start, grid.cell_order, grid.rlist)
    grid.checksum = float(np.sum(pos))
    return grid


def neighbors(grid: NeighborGrid, ps: ParticleSet, a: int):
    """Exact neighbor set of particle ``a``: [(b, dx, r)] with r < 2h strictly.

    ``dx = x_a - x_b``.  In debug mode a stale grid (positions changed since
    the last rebuild) is rejected via the position checksum.
    """
    if grid.nbr_start is None:
        raise ValueError("grid has not been built")
    if grid.debug and float(np.sum(ps.pos)) != grid.checksum:
        raise RuntimeError("stale neighbor grid: positions changed since rebuild")
    out = []
    xa = ps.pos[a]
    for k in range(grid.nbr_start[a], grid.nbr_start[a + 1]):
        b = int(grid.nbr_idx[k])
        dx = xa - ps.pos[b]
        r = math.hypot(dx[0], dx[1])
        if r < grid.support:
            out.append((b, dx, r))
    return out


def brute_force_neighbors(ps: ParticleSet, a: int):
    """O(n^2) oracle for the grid query: strict r < 2h."""
    out = []
    xa = ps.pos[a]
    for b in range(ps.n):
        if b == a:
            continue
        dx = xa - ps.pos[b]
        r = math.hypot(dx[0], dx[1])
        if r < 2.0 * ps.h:
            out.append((b, dx, r))
    return out
