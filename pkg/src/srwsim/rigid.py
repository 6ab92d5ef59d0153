"""Rigid-body dynamics of the wall blocks (full planar degrees of freedom).

A block is a rectangle represented by boundary particles pinned to its
perimeter.  Boundary world positions are always derived from the pose
(centroid + rotation), never integrated independently, so the shape cannot
drift.  All quantities are per unit out-of-plane length (2D plane strain).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Boundary-particle smoothing length = HCOEF_BP * boundary spacing, i.e.
#: half the soil smoothing length when the spacing is half the soil spacing.
HCOEF_BP = 1.2


def _perimeter_points(width: float, height: float, spacing: float) -> np.ndarray:
    """Corner points exactly at the corners, equi-spaced along each edge,
    each corner emitted once (start of its edge, walking the perimeter)."""
    w2 = width / 2.0
    h2 = height / 2.0
    corners = [(-w2, -h2), (w2, -h2), (w2, h2), (-w2, h2)]
    pts = []
    for c0, c1 in zip(corners, corners[1:] + corners[:1]):
        ex = c1[0] - c0[0]
        ey = c1[1] - c0[1]
        length = math.hypot(ex, ey)
        nseg = max(1, round(length / spacing))
        for k in range(nseg):
            t = k / nseg
            pts.append((c0[0] + t * ex, c0[1] + t * ey))
    return np.array(pts)


@dataclass
class RigidBlock:
    """A rectangular rigid block with boundary particles on its perimeter."""

    id: int
    width: float
    height: float
    density: float
    mass: float
    inertia: float
    local_offsets: np.ndarray          # (nb, 2) body frame, about centroid
    h_bp: float                        # boundary-particle smoothing length
    R: np.ndarray = field(default_factory=lambda: np.zeros(2))
    V: np.ndarray = field(default_factory=lambda: np.zeros(2))
    theta: float = 0.0
    omega: float = 0.0
    F: np.ndarray = field(default_factory=lambda: np.zeros(2))
    T: float = 0.0
    fixed: bool = False

    @property
    def n_boundary(self) -> int:
        return self.local_offsets.shape[0]

    def rotation(self) -> np.ndarray:
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def boundary_world_positions(self) -> np.ndarray:
        return self.R + self.local_offsets @ self.rotation().T

    def boundary_world_velocities(self) -> np.ndarray:
        r = self.boundary_world_positions() - self.R
        return self.V + self.omega * np.column_stack([-r[:, 1], r[:, 0]])

    def half_extent_x(self) -> float:
        """Horizontal half-extent of the rotated footprint."""
        return (self.width / 2.0 * abs(math.cos(self.theta))
                + self.height / 2.0 * abs(math.sin(self.theta)))

    def kinetic_energy(self) -> float:
        v2 = float(self.V @ self.V)
        return 0.5 * self.mass * v2 + 0.5 * self.inertia * self.omega ** 2


def make_block(width: float, height: float, density: float,
               spacing: float, id: int = 0) -> RigidBlock:
    """Build a block: M = rho w h, I = M (w^2 + h^2) / 12, boundary particles
    equi-spaced around the perimeter at the given spacing."""
    if width <= 0.0 or height <= 0.0:
        raise ValueError(f"degenerate block dimensions {width} x {height}")
    if density <= 0.0:
        raise ValueError(f"block density must be positive, got {density}")
    if spacing <= 0.0 or spacing > min(width, height):
        raise ValueError(f"boundary spacing {spacing} does not fit the block")
    mass = density * width * height
    inertia = mass * (width * width + height * height) / 12.0
    return RigidBlock(
        id=id, width=width, height=height, density=density,
        mass=mass, inertia=inertia,
        local_offsets=_perimeter_points(width, height, spacing),
        h_bp=HCOEF_BP * spacing)


def accumulate(block: RigidBlock, i: int, f: np.ndarray,
               r_world: np.ndarray | None = None) -> RigidBlock:
    """Add a boundary-particle force to the block's force/torque accumulators.

    Torque is the z-component of (r_i - R) x f; ``r_world`` overrides the
    pose-derived position of particle ``i`` (used when the caller already
    has it).
    """
    f = np.asarray(f, dtype=float)
    if r_world is None:
        r_world = block.boundary_world_positions()[i]
    arm = r_world - block.R
    block.F = block.F + f
    block.T = block.T + (arm[0] * f[1] - arm[1] * f[0])
    return block


def advance(block: RigidBlock, g: np.ndarray, dt: float) -> RigidBlock:
    """Kick velocities from the accumulated force/torque + gravity, drift the
    pose, and reset the accumulators.  Fixed blocks only reset."""
    if not block.fixed:
        block.V = block.V + (block.F / block.mass + np.asarray(g, float)) * dt
        block.omega = block.omega + block.T / block.inertia * dt
        block.R = block.R + block.V * dt
        block.theta = block.theta + block.omega * dt
    block.F = np.zeros(2)
    block.T = 0.0
    return block
