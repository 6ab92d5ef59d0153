"""Lattice initialization and uniform-grid neighbor search."""

import math

import numpy as np
import pytest

from srwsim.constitutive import MaterialParams
from srwsim.errors import NumericalAbort
from srwsim.particles import (NeighborGrid, ParticleSet,
                              brute_force_neighbors, lattice_init,
                              lattice_points, neighbors, rebuild)


@pytest.fixture
def soil():
    return MaterialParams(1.5e6, 0.3, 0.0, math.radians(19.8), 0.0, 23.0e3)


UNIT_SQUARE = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


class TestLattice:
    def test_unit_square_spacing_half(self, soil):
        ps = lattice_init(UNIT_SQUARE, 0.5, soil)
        assert ps.n == 4
        assert np.allclose(sorted(ps.pos[:, 0]), [0.25, 0.25, 0.75, 0.75])
        assert np.all(ps.mass == ps.mass[0])

    def test_particle_mass(self, soil):
        # rho0 = 23000/9.81, mass = rho0 * spacing^2 per unit length
        ps = lattice_init(UNIT_SQUARE, 0.0025, soil)
        expect = 23.0e3 / 9.81 * 0.0025 ** 2
        assert ps.mass[0] == pytest.approx(expect, rel=1e-12)
        assert ps.mass[0] == pytest.approx(0.01465, abs=5e-5)

    def test_empty_region_raises(self, soil):
        tiny = np.array([(0.0, 0.0), (1e-4, 0.0), (1e-4, 1e-4)])
        with pytest.raises(ValueError):
            lattice_init(tiny, 0.5, soil)

    def test_smoothing_length_is_1p2_spacing(self, soil):
        ps = lattice_init(UNIT_SQUARE, 0.01, soil)
        assert ps.h == pytest.approx(0.012)

    def test_ids_unique(self, soil):
        ps = lattice_init(UNIT_SQUARE, 0.1, soil)
        assert len(np.unique(ps.ids)) == ps.n

    def test_points_respect_polygon(self):
        tri = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
        pts = lattice_points(tri, 0.1)
        assert np.all(pts[:, 0] + pts[:, 1] < 1.0)
        assert len(pts) > 0


def make_cloud(n, seed, span=1.0, spacing=0.05):
    rng = np.random.default_rng(seed)
    ps = ParticleSet.empty(spacing)
    ps.ids = np.arange(n, dtype=np.int64)
    ps.kind = np.zeros(n, np.uint8)
    ps.pos = rng.uniform(0, span, size=(n, 2))
    ps.vel = np.zeros((n, 2))
    ps.rho = np.full(n, 1000.0)
    ps.mass = np.full(n, 1.0)
    ps.stress = np.zeros((n, 4))
    ps.eps_p = np.zeros(n)
    return ps


class TestGrid:
    def test_pair_inside_support(self):
        ps = make_cloud(2, 0)
        ps.pos[0] = [0.0, 0.0]
        ps.pos[1] = [1.9 * ps.h, 0.0]
        grid = NeighborGrid.build(ps)
        assert [b for b, _, _ in neighbors(grid, ps, 0)] == [1]
        assert [b for b, _, _ in neighbors(grid, ps, 1)] == [0]

    def test_pair_outside_support(self):
        ps = make_cloud(2, 0)
        ps.pos[0] = [0.0, 0.0]
        ps.pos[1] = [2.1 * ps.h, 0.0]
        grid = NeighborGrid.build(ps)
        assert neighbors(grid, ps, 0) == []
        assert neighbors(grid, ps, 1) == []

    def test_exactly_at_support_excluded(self):
        ps = make_cloud(2, 0)
        ps.pos[0] = [0.0, 0.0]
        ps.pos[1] = [2.0 * ps.h, 0.0]
        grid = NeighborGrid.build(ps)
        assert neighbors(grid, ps, 0) == []

    def test_isolated_particle(self):
        ps = make_cloud(1, 0)
        grid = NeighborGrid.build(ps)
        assert neighbors(grid, ps, 0) == []

    @pytest.mark.parametrize("n,seed", [(100, 1), (1000, 2), (2000, 3)])
    def test_matches_brute_force(self, n, seed):
        ps = make_cloud(n, seed)
        grid = NeighborGrid.build(ps, skin=0.3 * ps.spacing)
        for a in range(0, n, max(1, n // 50)):
            got = sorted(b for b, _, _ in neighbors(grid, ps, a))
            want = sorted(b for b, _, _ in brute_force_neighbors(ps, a))
            assert got == want

    def test_symmetry(self):
        ps = make_cloud(500, 11)
        grid = NeighborGrid.build(ps)
        sets = [set(b for b, _, _ in neighbors(grid, ps, a)) for a in range(ps.n)]
        for a in range(ps.n):
            for b in sets[a]:
                assert a in sets[b]

    def test_lattice_interior_neighbor_count(self, soil):
        # oracle: enumerate lattice offsets with r < 2.4 spacings
        expect = sum(1 for i in range(-3, 4) for j in range(-3, 4)
                     if (i, j) != (0, 0) and math.hypot(i, j) < 2.4)
        assert expect == 20
        sq = np.array([(0.0, 0.0), (0.05, 0.0), (0.05, 0.05), (0.0, 0.05)])
        ps = lattice_init(sq, 0.0025, soil)
        grid = NeighborGrid.build(ps)
        center = int(np.argmin(((ps.pos - [0.025, 0.025]) ** 2).sum(axis=1)))
        assert len(neighbors(grid, ps, center)) == expect

    def test_displacement_and_distance_returned(self):
        ps = make_cloud(2, 0)
        ps.pos[0] = [0.0, 0.0]
        ps.pos[1] = [0.05, 0.0]
        grid = NeighborGrid.build(ps)
        b, dx, r = neighbors(grid, ps, 0)[0]
        assert b == 1
        assert np.allclose(dx, [-0.05, 0.0])
        assert r == pytest.approx(0.05)

    def test_stale_grid_detected_in_debug(self):
        ps = make_cloud(10, 4)
        grid = NeighborGrid.build(ps, debug=True)
        neighbors(grid, ps, 0)
        ps.pos[0] += 0.3
        with pytest.raises(RuntimeError):
            neighbors(grid, ps, 0)
        rebuild(grid, ps)
        neighbors(grid, ps, 0)

    def test_runaway_particle_aborts(self):
        ps = make_cloud(20, 5)
        grid = NeighborGrid.build(ps)
        ps.pos[3] = [200.0, 0.5]
        with pytest.raises(NumericalAbort):
            rebuild(grid, ps)

    def test_total_mass_conserved_by_rebuild(self):
        ps = make_cloud(300, 6)
        total = ps.total_mass()
        grid = NeighborGrid.build(ps)
        for _ in range(5):
            ps.pos += 0.01
            rebuild(grid, ps)
        assert ps.total_mass() == total
