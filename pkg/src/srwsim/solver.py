"""SPH momentum solver, leapfrog stepping, and the coupled world state.

One step is kick-drift-kick leapfrog with a single force evaluation:

  half-kick -> drift -> (rebuild neighbors if stale) -> velocity gradients
  and density rate -> constitutive stress/density update -> contact forces
  -> SPH stress-sum forces -> half-kick

All heavy loops are numba-compiled.  The per-particle SPH loops are pure
gathers (each iteration writes only its own particle's slots), so they are
deterministic for any thread count; contact resolution and reductions run
serially in a fixed order.  Repeated runs of the same scene produce
bit-identical state.

Free-slip lateral walls are realized as mirror ghosts: every particle
within kernel range of a wall line contributes a mirrored image (x
reflected, vx and sxy sign-flipped) to the neighbor sums, which makes the
wall an exact symmetry plane and removes the one-sided-support bias that a
bare velocity constraint leaves at the wall columns.  Ghosts live in
"combined" arrays appended after the real particles; they are never
integrated, never contacted, and never written to snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .constitutive import MaterialParams, update_stress_core
from .contact import (MIN_PAIR_DISTANCE, ContactMaterial, normal_force_core,
                      pair_params, shear_force_core)
from .errors import NumericalAbort
from .kernel import grad_w_factor, w_cubic
from .particles import (KIND_SOIL, NeighborGrid, ParticleSet,
                        rebuild_positions)

# contact pair classes (other side of a block boundary particle)
CLASS_SOIL = 0
CLASS_BASE = 1
CLASS_BLOCK = 2
CLASS_STOPPER = 3
N_CLASSES = 4

#: Maximum simultaneous contacts per block boundary particle.
MAX_CONTACTS = 10

#: Neighbor-list skin as a fraction of the lattice spacing; lists are
#: rebuilt when accumulated motion exceeds half the skin.
SKIN_FACTOR = 0.4

#: Velocity-constraint band at base/walls, fraction of the lattice spacing.
BOUNDARY_BAND = 0.6

_FINITE_CHECK_EVERY = 16


@dataclass
class StabilizationParams:
    """Artificial viscosity + artificial (tensile) stress constants."""

    viscosity_alpha: float = 0.1
    viscosity_beta: float = 0.1
    artificial_stress_eps: float = 0.3
    artificial_stress_exponent: float = 2.55

    def __post_init__(self):
        for name in ("viscosity_alpha", "viscosity_beta",
                     "artificial_stress_eps", "artificial_stress_exponent"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class SolverControls:
    """Time stepping and run-phase controls."""

    t_end: float
    cfl_factor: float = 0.1
    dt_max: float = 1.0e-4
    snapshot_interval: float = 0.05
    damping_phase_duration: float = 0.2
    damping_coefficient: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.cfl_factor <= 0.5:
            raise ValueError(f"cfl_factor must lie in (0, 0.5], got {self.cfl_factor}")
        if self.t_end < 0.0:
            raise ValueError(f"t_end must be non-negative, got {self.t_end}")
        if self.dt_max <= 0.0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")


def sound_speed(material: MaterialParams, gravity_magnitude: float = 9.81) -> float:
    """Elastic P-wave speed sqrt((K + 4G/3)/rho0) of the soil."""
    rho0 = material.density(gravity_magnitude)
    return math.sqrt((material.bulk_modulus + 4.0 * material.shear_modulus / 3.0) / rho0)


def stable_dt(ps: ParticleSet, m: MaterialParams, ctl: SolverControls,
              gravity_magnitude: float = 9.81, extra_speed: float = 0.0) -> float:
    """CFL time step: cfl * h / (c_s + max particle speed), capped by dt_max."""
    c_s = sound_speed(m, gravity_magnitude)
    vmax = extra_speed
    if ps.n:
        vmax = max(vmax, float(np.sqrt((ps.vel ** 2).sum(axis=1)).max()))
    dt = ctl.cfl_factor * ps.h / (c_s + vmax)
    return min(dt, ctl.dt_max)


# ----------------------------------------------------------------------
# numba kernels
# ----------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _pass_rates(pos, vel, vol, mass, n_real, nbr_start, nbr_idx, h, support,
                pair_F, pair_W, Lxx, Lxy, Lyx, Lyy, drho):
    """SPH velocity gradient (density-weighted) + continuity density rate.

    Arrays are the combined real+ghost set; only real particles get their
    own sums.  The kernel gradient factor and kernel value are cached per
    directed neighbor entry for reuse by the force pass (positions do not
    change in between).
    """
    for a in prange(n_real):
        xa = pos[a, 0]
        ya = pos[a, 1]
        vax = vel[a, 0]
        vay = vel[a, 1]
        lxx = 0.0
        lxy = 0.0
        lyx = 0.0
        lyy = 0.0
        dr = 0.0
        for k in range(nbr_start[a], nbr_start[a + 1]):
            b = nbr_idx[k]
            dx = xa - pos[b, 0]
            dy = ya - pos[b, 1]
            r = math.sqrt(dx * dx + dy * dy)
            if r >= support:
                pair_F[k] = 0.0
                pair_W[k] = 0.0
                continue
            F = grad_w_factor(r, h)
            pair_F[k] = F
            pair_W[k] = w_cubic(r, h)
            gx = F * dx
            gy = F * dy
            dvx = vel[b, 0] - vax
            dvy = vel[b, 1] - vay
            vb = vol[b]
            lxx += vb * dvx * gx
            lxy += vb * dvx * gy
            lyx += vb * dvy * gx
            lyy += vb * dvy * gy
            dr -= mass[b] * (dvx * gx + dvy * gy)
        Lxx[a] = lxx
        Lxy[a] = lxy
        Lyx[a] = lyx
        Lyy[a] = lyy
        drho[a] = dr


@njit(cache=True, parallel=True)
def _pass_constitutive(stress, eps_p, rho, drho, Lxx, Lxy, Lyx, Lyy, kind,
                       dt, G, K, aphi, kc, apsi, rho0, eps_art,
                       Rxx, Ryy, Rxy, has_R, bad):
    """Stress update + density advance + artificial-stress tensor per particle."""
    n = rho.shape[0]
    for a in prange(n):
        exx = Lxx[a]
        eyy = Lyy[a]
        exy = 0.5 * (Lxy[a] + Lyx[a])
        w = 0.5 * (Lxy[a] - Lyx[a])
        sxx, syy, szz, sxy, dlam = update_stress_core(
            stress[a, 0], stress[a, 1], stress[a, 2], stress[a, 3],
            exx, eyy, exy, w, dt, G, K, aphi, kc, apsi)
        stress[a, 0] = sxx
        stress[a, 1] = syy
        stress[a, 2] = szz
        stress[a, 3] = sxy
        eps_p[a] += dlam
        r = rho[a] + drho[a] * dt
        rho[a] = r
        ok = (r > 0.5 * rho0) and (r < 2.0 * rho0) and math.isfinite(r) \
            and math.isfinite(sxx + syy + szz + sxy)
        bad[a] = 0 if ok else 1

        # artificial stress handles tensile principal directions (soil only)
        rxx = 0.0
        ryy = 0.0
        rxy = 0.0
        flag = 0
        if eps_art > 0.0 and kind[a] == KIND_SOIL:
            mean2 = 0.5 * (sxx + syy)
            dif = 0.5 * (sxx - syy)
            rad = math.sqrt(dif * dif + sxy * sxy)
            s1 = mean2 + rad
            s2 = mean2 - rad
            if s1 > 0.0 or s2 > 0.0:
                inv = eps_art / (r * r)
                r1 = -inv * s1 if s1 > 0.0 else 0.0
                r2 = -inv * s2 if s2 > 0.0 else 0.0
                if rad > 1.0e-300:
                    c2t = dif / rad
                    s2t = sxy / rad
                else:
                    c2t = 1.0
                    s2t = 0.0
                hs = 0.5 * (r1 + r2)
                hd = 0.5 * (r1 - r2)
                rxx = hs + hd * c2t
                ryy = hs - hd * c2t
                rxy = hd * s2t
                flag = 1
        Rxx[a] = rxx
        Ryy[a] = ryy
        Rxy[a] = rxy
        has_R[a] = flag


@njit(cache=True, parallel=True)
def _pass_forces(pos, vel, rho, inv_rho2, mass, stress, kind, n_real,
                 nbr_start, nbr_idx, pair_F, pair_W, Rxx, Ryy, Rxy, has_R,
                 w_dp, n_art, alpha_v, beta_v, c_sound, h, acc):
    """Momentum-equation stress sum with artificial viscosity/stress.

    Combined arrays; accelerations are produced for real particles only.
    """
    eps_h2 = 0.01 * h * h
    for a in prange(n_real):
        if kind[a] != KIND_SOIL:
            acc[a, 0] = 0.0
            acc[a, 1] = 0.0
            continue
        ra = rho[a]
        inv_ra2 = inv_rho2[a]
        saxx = stress[a, 0] * inv_ra2
        sayy = stress[a, 1] * inv_ra2
        saxy = stress[a, 3] * inv_ra2
        hra = has_R[a]
        ax = 0.0
        ay = 0.0
        for k in range(nbr_start[a], nbr_start[a + 1]):
            F = pair_F[k]
            if F == 0.0:
                continue
            b = nbr_idx[k]
            dx = pos[a, 0] - pos[b, 0]
            dy = pos[a, 1] - pos[b, 1]
            rb = rho[b]
            inv_rb2 = inv_rho2[b]
            bxx = saxx + stress[b, 0] * inv_rb2
            byy = sayy + stress[b, 1] * inv_rb2
            bxy = saxy + stress[b, 3] * inv_rb2
            dvx = vel[a, 0] - vel[b, 0]
            dvy = vel[a, 1] - vel[b, 1]
            vdotx = dvx * dx + dvy * dy
            if vdotx < 0.0:
                mu = h * vdotx / (dx * dx + dy * dy + eps_h2)
                piab = (-alpha_v * c_sound * mu + beta_v * mu * mu) * 2.0 / (ra + rb)
                bxx -= piab
                byy -= piab
            if n_art > 0.0 and kind[b] == KIND_SOIL and (hra == 1 or has_R[b] == 1):
                fab = (pair_W[k] / w_dp) ** n_art
                bxx += fab * (Rxx[a] + Rxx[b])
                byy += fab * (Ryy[a] + Ryy[b])
                bxy += fab * (Rxy[a] + Rxy[b])
            gx = F * dx
            gy = F * dy
            mb = mass[b]
            ax += mb * (bxx * gx + bxy * gy)
            ay += mb * (bxy * gx + byy * gy)
        acc[a, 0] = ax
        acc[a, 1] = ay


@njit(cache=True)
def _resolve_pair(i, code, xa, ya, vax, vay, xi, yi, vix, viy,
                  act, e_eff, g_eq, mu, m_eff, dt,
                  slot_partner, slot_ds, slot_seen):
    """One contact pair: force on the block boundary particle ``i``.

    Returns (fx, fy, f_n, coulomb_excess, status); status 1 flags a
    coincident pair, 2 a contact-slot overflow.
    """
    dx = xi - xa
    dy = yi - ya
    d2 = dx * dx + dy * dy
    if d2 >= act * act:
        return 0.0, 0.0, 0.0, 0.0, 0
    d = math.sqrt(d2)
    if d < MIN_PAIR_DISTANCE:
        return 0.0, 0.0, 0.0, 0.0, 1
    delta_n = act - d
    ex = dx / d
    ey = dy / d
    approach = (vax - vix) * ex + (vay - viy) * ey
    fn = normal_force_core(delta_n, approach, e_eff, m_eff, act)
    nslots = slot_partner.shape[1]
    slot = -1
    free = -1
    for s in range(nslots):
        pc = slot_partner[i, s]
        if pc == code:
            slot = s
            break
        if pc == -1 and free == -1:
            free = s
    if slot == -1:
        if free == -1:
            return 0.0, 0.0, 0.0, 0.0, 2
        slot = free
        slot_partner[i, slot] = code
        slot_ds[i, slot] = 0.0
    tx = -ey
    ty = ex
    v_s = (vix - vax) * tx + (viy - vay) * ty
    fs, nds = shear_force_core(slot_ds[i, slot], v_s, fn, g_eq, mu,
                               m_eff, act, delta_n, dt)
    slot_ds[i, slot] = nds
    slot_seen[i, slot] = 1
    excess = abs(fs) - mu * fn
    return fn * ex + fs * tx, fn * ey + fs * ty, fn, excess, 0


@njit(cache=True)
def _contact_pass(bp_pos, bp_vel, bp_block, bp_h, bp_start,
                  B_R, B_M, B_fixed,
                  pos, vel, mass, kind, h_sph, n_real,
                  cell, gxmin, gymin, ncx, ncy, cell_start, cell_order,
                  cs_pos, cs_h, cs_class, cs_active,
                  bb_pairs,
                  cls_eeff, cls_geq, cls_mu,
                  slot_partner, slot_ds, slot_seen,
                  fc, B_F, B_T, dt):
    """All contact interactions for one step (serial; fixed ordering).

    Returns (status, max Coulomb excess).  Forces on blocks are accumulated
    into B_F/B_T; reactions on soil particles into fc.  Mirror ghosts
    (grid indices >= n_real) never participate in contact.
    """
    status = 0
    audit = 0.0
    nb = bp_pos.shape[0]
    n_sph = n_real

    # block boundary particles vs SPH particles (soil / static base)
    if n_sph > 0:
        for i in range(nb):
            blk = bp_block[i]
            hi = bp_h[i]
            xi = bp_pos[i, 0]
            yi = bp_pos[i, 1]
            vix = bp_vel[i, 0]
            viy = bp_vel[i, 1]
            mblk = B_M[blk]
            cx = int((xi - gxmin) / cell)
            cy = int((yi - gymin) / cell)
            for dyc in range(-1, 2):
                gy = cy + dyc
                if gy < 0 or gy >= ncy:
                    continue
                for dxc in range(-1, 2):
                    gx = cx + dxc
                    if gx < 0 or gx >= ncx:
                        continue
                    c = gy * ncx + gx
                    for kk in range(cell_start[c], cell_start[c + 1]):
                        p = cell_order[kk]
                        if p >= n_real:
                            continue
                        act = 0.5 * (h_sph + hi)
                        ddx = xi - pos[p, 0]
                        ddy = yi - pos[p, 1]
                        if ddx * ddx + ddy * ddy >= act * act:
                            continue
                        if kind[p] == KIND_SOIL:
                            cls = CLASS_SOIL
                            if B_fixed[blk] == 1:
                                m_eff = mass[p]
                            else:
                                m_eff = mass[p] * mblk / (mass[p] + mblk)
                        else:
                            cls = CLASS_BASE
                            m_eff = mblk
                        fx, fy, fn, exc, st = _resolve_pair(
                            i, p, pos[p, 0], pos[p, 1], vel[p, 0], vel[p, 1],
                            xi, yi, vix, viy, act,
                            cls_eeff[cls], cls_geq[cls], cls_mu[cls], m_eff, dt,
                            slot_partner, slot_ds, slot_seen)
                        if st != 0:
                            status = st
                        if fn > 0.0:
                            if exc > audit:
                                audit = exc
                            B_F[blk, 0] += fx
                            B_F[blk, 1] += fy
                            B_T[blk] += (xi - B_R[blk, 0]) * fy - (yi - B_R[blk, 1]) * fx
                            if cls == CLASS_SOIL:
                                fc[p, 0] -= fx
                                fc[p, 1] -= fy

    # block vs block (owner side = lower block index)
    for pr in range(bb_pairs.shape[0]):
        A = bb_pairs[pr, 0]
        B = bb_pairs[pr, 1]
        if B_fixed[A] == 1 and B_fixed[B] == 1:
            continue
        if B_fixed[A] == 1:
            m_eff = B_M[B]
        elif B_fixed[B] == 1:
            m_eff = B_M[A]
        else:
            m_eff = B_M[A] * B_M[B] / (B_M[A] + B_M[B])
        for i in range(bp_start[A], bp_start[A + 1]):
            xi = bp_pos[i, 0]
            yi = bp_pos[i, 1]
            vix = bp_vel[i, 0]
            viy = bp_vel[i, 1]
            for j in range(bp_start[B], bp_start[B + 1]):
                act = 0.5 * (bp_h[i] + bp_h[j])
                ddx = xi - bp_pos[j, 0]
                ddy = yi - bp_pos[j, 1]
                if ddx * ddx + ddy * ddy >= act * act:
                    continue
                fx, fy, fn, exc, st = _resolve_pair(
                    i, n_sph + j, bp_pos[j, 0], bp_pos[j, 1],
                    bp_vel[j, 0], bp_vel[j, 1],
                    xi, yi, vix, viy, act,
                    cls_eeff[CLASS_BLOCK], cls_geq[CLASS_BLOCK],
                    cls_mu[CLASS_BLOCK], m_eff, dt,
                    slot_partner, slot_ds, slot_seen)
                if st != 0:
                    status = st
                if fn > 0.0:
                    if exc > audit:
                        audit = exc
                    B_F[A, 0] += fx
                    B_F[A, 1] += fy
                    B_T[A] += (xi - B_R[A, 0]) * fy - (yi - B_R[A, 1]) * fx
                    B_F[B, 0] -= fx
                    B_F[B, 1] -= fy
                    B_T[B] -= (bp_pos[j, 0] - B_R[B, 0]) * fy - (bp_pos[j, 1] - B_R[B, 1]) * fx

    # block vs static contact obstacles (stopper, extra base pieces)
    ncs = cs_pos.shape[0]
    if ncs > 0:
        for i in range(nb):
            blk = bp_block[i]
            xi = bp_pos[i, 0]
            yi = bp_pos[i, 1]
            vix = bp_vel[i, 0]
            viy = bp_vel[i, 1]
            mblk = B_M[blk]
            for s in range(ncs):
                if cs_active[s] == 0:
                    continue
                act = 0.5 * (bp_h[i] + cs_h[s])
                if abs(xi - cs_pos[s, 0]) >= act or abs(yi - cs_pos[s, 1]) >= act:
                    continue
                cls = cs_class[s]
                fx, fy, fn, exc, st = _resolve_pair(
                    i, n_sph + nb + s, cs_pos[s, 0], cs_pos[s, 1], 0.0, 0.0,
                    xi, yi, vix, viy, act,
                    cls_eeff[cls], cls_geq[cls], cls_mu[cls], mblk, dt,
                    slot_partner, slot_ds, slot_seen)
                if st != 0:
                    status = st
                if fn > 0.0:
                    if exc > audit:
                        audit = exc
                    B_F[blk, 0] += fx
                    B_F[blk, 1] += fy
                    B_T[blk] += (xi - B_R[blk, 0]) * fy - (yi - B_R[blk, 1]) * fx
    return status, audit


@njit(cache=True)
def _max_speed2(vel) -> float:
    v2 = 0.0
    for i in range(vel.shape[0]):
        s = vel[i, 0] * vel[i, 0] + vel[i, 1] * vel[i, 1]
        if s > v2:
            v2 = s
    return v2


@njit(cache=True)
def _cleanup_slots(slot_partner, slot_ds, slot_seen):
    """Deactivate pairs not seen this step (their slip accumulator resets)."""
    for i in range(slot_partner.shape[0]):
        for s in range(slot_partner.shape[1]):
            if slot_partner[i, s] != -1 and slot_seen[i, s] == 0:
                slot_partner[i, s] = -1
                slot_ds[i, s] = 0.0
            slot_seen[i, s] = 0


# ----------------------------------------------------------------------
# world
# ----------------------------------------------------------------------

class World:
    """Coupled state: SPH particle set, rigid blocks, contact bookkeeping."""

    def __init__(self, ps: ParticleSet, material: MaterialParams,
                 stab: StabilizationParams, controls: SolverControls,
                 gravity, blocks=(), contact_statics=None,
                 contact_materials=None, friction=None,
                 base_y=None, left_wall=None, right_wall=None,
                 mirror_walls: bool = True, debug: bool = False):
        self.ps = ps
        self.material = material
        self.stab = stab
        self.controls = controls
        self.gravity = np.asarray(gravity, dtype=float)
        self.g_mag = float(np.linalg.norm(self.gravity))
        self.base_y = base_y
        self.left_wall = left_wall
        self.right_wall = right_wall
        self.mirror_walls = mirror_walls
        self.debug = debug
        self.time = 0.0
        self.step_index = 0
        self.damping_active = False
        self.external_accel = None
        self.audit_max_coulomb_excess = 0.0

        self.c_sound = sound_speed(material, self.g_mag if self.g_mag > 0 else 9.81)
        self.w_dp = w_cubic(ps.spacing, ps.h)
        self.soil_mask = ps.kind == KIND_SOIL
        self.static_mask = ps.kind != KIND_SOIL
        self.band = BOUNDARY_BAND * ps.spacing
        self.skin = SKIN_FACTOR * ps.spacing

        # rigid blocks flattened into arrays
        self.blocks = list(blocks)
        nbk = len(self.blocks)
        self.B_R = np.zeros((nbk, 2))
        self.B_V = np.zeros((nbk, 2))
        self.B_th = np.zeros(nbk)
        self.B_om = np.zeros(nbk)
        self.B_M = np.zeros(nbk)
        self.B_I = np.zeros(nbk)
        self.B_fixed = np.zeros(nbk, np.uint8)
        self.B_F = np.zeros((nbk, 2))
        self.B_T = np.zeros(nbk)
        self.B_acc = np.zeros((nbk, 2))
        self.B_alpha = np.zeros(nbk)
        locals_list = []
        bp_block = []
        bp_h = []
        self.bp_start = np.zeros(nbk + 1, np.int64)
        for k, blk in enumerate(self.blocks):
            self.B_R[k] = blk.R
            self.B_V[k] = blk.V
            self.B_th[k] = blk.theta
            self.B_om[k] = blk.omega
            self.B_M[k] = blk.mass
            self.B_I[k] = blk.inertia
            self.B_fixed[k] = 1 if blk.fixed else 0
            locals_list.append(blk.local_offsets)
            bp_block.extend([k] * blk.n_boundary)
            bp_h.extend([blk.h_bp] * blk.n_boundary)
            self.bp_start[k + 1] = self.bp_start[k] + blk.n_boundary
        self.bp_local = np.vstack(locals_list) if nbk else np.empty((0, 2))
        self.bp_block = np.asarray(bp_block, np.int64)
        self.bp_h = np.asarray(bp_h, float)
        nb = self.bp_local.shape[0]
        self.bp_pos = np.zeros((nb, 2))
        self.bp_vel = np.zeros((nb, 2))

        # static contact obstacles
        if contact_statics is None:
            self.cs_pos = np.empty((0, 2))
            self.cs_h = np.empty(0)
            self.cs_class = np.empty(0, np.int64)
        else:
            self.cs_pos = np.asarray(contact_statics["pos"], float).reshape(-1, 2)
            self.cs_h = np.asarray(contact_statics["h"], float)
            self.cs_class = np.asarray(contact_statics["cls"], np.int64)
        self.cs_active = np.ones(self.cs_pos.shape[0], np.uint8)

        # per-class contact constants
        self.cls_eeff = np.zeros(N_CLASSES)
        self.cls_geq = np.zeros(N_CLASSES)
        self.cls_mu = np.zeros(N_CLASSES)
        if contact_materials and "block" in contact_materials:
            block_mat = contact_materials["block"]
            friction = friction or {}
            class_other = {CLASS_SOIL: ("soil", "block_soil"),
                           CLASS_BASE: ("base", "block_base"),
                           CLASS_BLOCK: ("block", "block_block"),
                           CLASS_STOPPER: ("stopper", "block_stopper")}
            for cls, (other_name, fkey) in class_other.items():
                other = contact_materials.get(other_name)
                if other is None or fkey not in friction:
                    continue
                fmap = {frozenset((block_mat.name, other.name)): friction[fkey]}
                params = pair_params(block_mat, other, fmap)
                self.cls_eeff[cls] = params.e_eff
                self.cls_geq[cls] = params.g_eq
                self.cls_mu[cls] = params.mu

        # contact slip slots, keyed by block boundary particle
        self.slot_partner = np.full((nb, MAX_CONTACTS), -1, np.int64)
        self.slot_ds = np.zeros((nb, MAX_CONTACTS))
        self.slot_seen = np.zeros((nb, MAX_CONTACTS), np.uint8)

        self.fc = np.zeros((ps.n, 2))
        self.acc = np.zeros((ps.n, 2))

        # scratch per-particle arrays (real particles)
        n = ps.n
        self.Lxx = np.zeros(n)
        self.Lxy = np.zeros(n)
        self.Lyx = np.zeros(n)
        self.Lyy = np.zeros(n)
        self.drho = np.zeros(n)
        self.Rxx = np.zeros(n)
        self.Ryy = np.zeros(n)
        self.Rxy = np.zeros(n)
        self.has_R = np.zeros(n, np.uint8)
        self.bad = np.zeros(n, np.uint8)

        self._sync_block_particles()
        self.grid = NeighborGrid(support=2.0 * ps.h,
                                 rlist=2.0 * ps.h + self.skin, debug=debug)
        self._rebuild_grid()
        self._init_forces()

    # -- small helpers -------------------------------------------------

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def n_ghosts(self) -> int:
        return self.g_src.shape[0]

    def _mirror_lines(self):
        lines = []
        if not self.mirror_walls:
            return lines
        if self.left_wall is not None:
            lines.append((self.left_wall, -1))
        if self.right_wall is not None:
            lines.append((self.right_wall, +1))
        return lines

    def _rebuild_grid(self):
        """Re-select mirror ghosts, rebuild cells + CSR over real+ghosts."""
        ps = self.ps
        margin = self.grid.rlist + self.skin
        srcs = []
        lines = []
        if ps.n:
            for wall_x, side in self._mirror_lines():
                if side < 0:
                    m = np.where(ps.pos[:, 0] < wall_x + margin)[0]
                else:
                    m = np.where(ps.pos[:, 0] > wall_x - margin)[0]
                srcs.append(m)
                lines.append(np.full(len(m), wall_x))
        if srcs:
            self.g_src = np.concatenate(srcs).astype(np.int64)
            self.g_line = np.concatenate(lines)
        else:
            self.g_src = np.empty(0, np.int64)
            self.g_line = np.empty(0)
        ng = self.n_ghosts
        n = ps.n
        if ng == 0:
            # alias the real arrays; no per-step copies needed
            self.pos_c = ps.pos
            self.vel_c = ps.vel
            self.rho_c = ps.rho
            self.mass_c = ps.mass
            self.stress_c = ps.stress
            self.kind_c = ps.kind
            self.Rxx_c = self.Rxx
            self.Ryy_c = self.Ryy
            self.Rxy_c = self.Rxy
            self.hasR_c = self.has_R
        else:
            self.pos_c = np.empty((n + ng, 2))
            self.vel_c = np.empty((n + ng, 2))
            self.rho_c = np.empty(n + ng)
            self.mass_c = np.empty(n + ng)
            self.stress_c = np.empty((n + ng, 4))
            self.kind_c = np.empty(n + ng, np.uint8)
            self.Rxx_c = np.empty(n + ng)
            self.Ryy_c = np.empty(n + ng)
            self.Rxy_c = np.empty(n + ng)
            self.hasR_c = np.empty(n + ng, np.uint8)
            self.mass_c[:n] = ps.mass
            self.mass_c[n:] = ps.mass[self.g_src]
            self.kind_c[:n] = ps.kind
            self.kind_c[n:] = ps.kind[self.g_src]
            self._refresh_ghost_kinematics()
            self._refresh_ghost_state()
            self._refresh_ghost_R()
        rebuild_positions(self.grid, self.pos_c)
        self._alloc_pair_cache()
        self.disp_acc = 0.0

    def _refresh_ghost_kinematics(self):
        if self.n_ghosts == 0:
            return
        ps = self.ps
        n = ps.n
        src = self.g_src
        self.pos_c[:n] = ps.pos
        self.vel_c[:n] = ps.vel
        self.pos_c[n:, 0] = 2.0 * self.g_line - ps.pos[src, 0]
        self.pos_c[n:, 1] = ps.pos[src, 1]
        self.vel_c[n:, 0] = -ps.vel[src, 0]
        self.vel_c[n:, 1] = ps.vel[src, 1]

    def _refresh_ghost_state(self):
        if self.n_ghosts == 0:
            return
        ps = self.ps
        n = ps.n
        src = self.g_src
        self.rho_c[:n] = ps.rho
        self.rho_c[n:] = ps.rho[src]
        self.stress_c[:n] = ps.stress
        self.stress_c[n:] = ps.stress[src]
        self.stress_c[n:, 3] *= -1.0

    def _refresh_ghost_R(self):
        if self.n_ghosts == 0:
            return
        n = self.ps.n
        src = self.g_src
        self.Rxx_c[:n] = self.Rxx
        self.Ryy_c[:n] = self.Ryy
        self.Rxy_c[:n] = self.Rxy
        self.hasR_c[:n] = self.has_R
        self.Rxx_c[n:] = self.Rxx[src]
        self.Ryy_c[n:] = self.Ryy[src]
        self.Rxy_c[n:] = -self.Rxy[src]
        self.hasR_c[n:] = self.has_R[src]

    def _alloc_pair_cache(self):
        m = self.grid.nbr_idx.shape[0]
        self.pair_F = np.zeros(m)
        self.pair_W = np.zeros(m)

    def _sync_block_particles(self):
        if self.n_blocks == 0:
            return
        blk = self.bp_block
        c = np.cos(self.B_th)[blk]
        s = np.sin(self.B_th)[blk]
        lx = self.bp_local[:, 0]
        ly = self.bp_local[:, 1]
        rx = c * lx - s * ly
        ry = s * lx + c * ly
        self.bp_pos[:, 0] = self.B_R[blk, 0] + rx
        self.bp_pos[:, 1] = self.B_R[blk, 1] + ry
        om = self.B_om[blk]
        self.bp_vel[:, 0] = self.B_V[blk, 0] - om * ry
        self.bp_vel[:, 1] = self.B_V[blk, 1] + om * rx

    def sync_blocks(self):
        """Copy array state back into the RigidBlock objects."""
        for k, blk in enumerate(self.blocks):
            blk.R = self.B_R[k].copy()
            blk.V = self.B_V[k].copy()
            blk.theta = float(self.B_th[k])
            blk.omega = float(self.B_om[k])
        return self.blocks

    def max_speed(self) -> float:
        v2 = 0.0
        if self.ps.n:
            v2 = _max_speed2(self.ps.vel)
        if self.n_blocks:
            v2 = max(v2, _max_speed2(self.bp_vel))
        return math.sqrt(v2)

    def kinetic_energy(self) -> float:
        ke = 0.0
        if self.ps.n:
            ke += 0.5 * float(self.ps.mass @ (self.ps.vel ** 2).sum(axis=1))
        for k in range(self.n_blocks):
            ke += 0.5 * self.B_M[k] * float(self.B_V[k] @ self.B_V[k])
            ke += 0.5 * self.B_I[k] * self.B_om[k] ** 2
        return ke

    def max_entity_kinetic_energy(self) -> float:
        ke = 0.0
        if self.ps.n:
            soil = self.soil_mask
            if np.any(soil):
                ke = float((0.5 * self.ps.mass[soil]
                            * (self.ps.vel[soil] ** 2).sum(axis=1)).max())
        for k in range(self.n_blocks):
            ke = max(ke, 0.5 * self.B_M[k] * float(self.B_V[k] @ self.B_V[k])
                     + 0.5 * self.B_I[k] * self.B_om[k] ** 2)
        return ke

    def remove_stopper(self):
        self.cs_active[self.cs_class == CLASS_STOPPER] = 0

    def _block_pair_candidates(self) -> np.ndarray:
        nbk = self.n_blocks
        if nbk < 2:
            return np.empty((0, 2), np.int64)
        ext = np.empty((nbk, 2))
        for k, blk in enumerate(self.blocks):
            c = abs(math.cos(self.B_th[k]))
            s = abs(math.sin(self.B_th[k]))
            ext[k, 0] = 0.5 * blk.width * c + 0.5 * blk.height * s
            ext[k, 1] = 0.5 * blk.width * s + 0.5 * blk.height * c
        margin = 2.0 * float(self.bp_h.max()) if self.bp_h.size else 0.0
        pairs = []
        for a in range(nbk):
            for b in range(a + 1, nbk):
                if (abs(self.B_R[a, 0] - self.B_R[b, 0]) < ext[a, 0] + ext[b, 0] + margin
                        and abs(self.B_R[a, 1] - self.B_R[b, 1]) < ext[a, 1] + ext[b, 1] + margin):
                    pairs.append((a, b))
        if not pairs:
            return np.empty((0, 2), np.int64)
        return np.asarray(pairs, np.int64)

    # -- force evaluation ----------------------------------------------

    def _rates_phase(self):
        vol_c = self.mass_c / self.rho_c
        _pass_rates(self.pos_c, self.vel_c, vol_c, self.mass_c,
                    self.ps.n, self.grid.nbr_start, self.grid.nbr_idx,
                    self.ps.h, 2.0 * self.ps.h,
                    self.pair_F, self.pair_W,
                    self.Lxx, self.Lxy, self.Lyx, self.Lyy, self.drho)

    def _forces_phase(self, dt: float):
        """Contact + SPH forces from the current state into acc / B_acc."""
        self.fc[:] = 0.0
        self.B_F[:] = 0.0
        self.B_T[:] = 0.0
        if self.n_blocks:
            bb_pairs = self._block_pair_candidates()
            status, audit = _contact_pass(
                self.bp_pos, self.bp_vel, self.bp_block, self.bp_h, self.bp_start,
                self.B_R, self.B_M, self.B_fixed,
                self.ps.pos, self.ps.vel, self.ps.mass, self.ps.kind,
                self.ps.h, self.ps.n,
                self.grid.cell, self.grid.xmin, self.grid.ymin,
                self.grid.ncx, self.grid.ncy,
                self.grid.cell_start, self.grid.cell_order,
                self.cs_pos, self.cs_h, self.cs_class, self.cs_active,
                bb_pairs, self.cls_eeff, self.cls_geq, self.cls_mu,
                self.slot_partner, self.slot_ds, self.slot_seen,
                self.fc, self.B_F, self.B_T, dt)
            _cleanup_slots(self.slot_partner, self.slot_ds, self.slot_seen)
            if status == 1:
                raise NumericalAbort("coincident contact pair",
                                     step=self.step_index, time=self.time)
            if status == 2:
                raise NumericalAbort("contact slot overflow",
                                     step=self.step_index, time=self.time)
            if audit > self.audit_max_coulomb_excess:
                self.audit_max_coulomb_excess = audit

        if self.ps.n:
            inv_rho2_c = 1.0 / (self.rho_c * self.rho_c)
            _pass_forces(self.pos_c, self.vel_c, self.rho_c, inv_rho2_c,
                         self.mass_c, self.stress_c, self.kind_c, self.ps.n,
                         self.grid.nbr_start, self.grid.nbr_idx,
                         self.pair_F, self.pair_W,
                         self.Rxx_c, self.Ryy_c, self.Rxy_c, self.hasR_c,
                         self.w_dp, self.stab.artificial_stress_exponent,
                         self.stab.viscosity_alpha, self.stab.viscosity_beta,
                         self.c_sound, self.ps.h, self.acc)
            self.acc += self.gravity
            np.divide(self.fc, self.ps.mass[:, None], out=self.fc)
            self.acc += self.fc
            if self.external_accel is not None:
                self.acc += self.external_accel(self.ps.pos, self.ps.vel, self.time)
            self.acc[self.static_mask] = 0.0

        for k in range(self.n_blocks):
            if self.B_fixed[k]:
                self.B_acc[k] = 0.0
                self.B_alpha[k] = 0.0
            else:
                self.B_acc[k] = self.B_F[k] / self.B_M[k] + self.gravity
                self.B_alpha[k] = self.B_T[k] / self.B_I[k]

    def _init_forces(self):
        self._rates_phase()
        # artificial stress needs a constitutive pass; the initial state is
        # geostatic-compressive, so it starts at zero.
        self.Rxx[:] = 0.0
        self.Ryy[:] = 0.0
        self.Rxy[:] = 0.0
        self.has_R[:] = 0
        self._refresh_ghost_R()
        self._forces_phase(stable_dt(self.ps, self.material, self.controls,
                                     max(self.g_mag, 1e-12),
                                     extra_speed=0.0))


def compute_accelerations(world: World, gravity: bool = True,
                          contacts: bool = True) -> np.ndarray:
    """Per-particle accelerations for the current state (diagnostic entry).

    With ``contacts`` and ``gravity`` disabled this is the bare stress-sum
    momentum equation, which conserves linear momentum pairwise.  The
    world's live accumulators and contact state are restored afterwards.
    """
    saved = (world.acc.copy(), world.fc.copy(), world.B_F.copy(),
             world.B_T.copy(), world.B_acc.copy(), world.B_alpha.copy(),
             world.slot_partner.copy(), world.slot_ds.copy(),
             world.cls_eeff.copy(), world.cls_geq.copy(),
             world.gravity.copy(), world.audit_max_coulomb_excess)
    world._refresh_ghost_kinematics()
    world._refresh_ghost_state()
    world._rates_phase()
    if not contacts:
        world.cls_eeff[:] = 0.0
        world.cls_geq[:] = 0.0
    if not gravity:
        world.gravity = np.zeros(2)
    dt = stable_dt(world.ps, world.material, world.controls,
                   max(world.g_mag, 1e-12))
    try:
        world._forces_phase(dt)
        return world.acc.copy()
    finally:
        (world.acc[:], world.fc[:], world.B_F[:], world.B_T[:],
         world.B_acc[:], world.B_alpha[:], world.slot_partner[:],
         world.slot_ds[:], world.cls_eeff[:], world.cls_geq[:],
         world.gravity, world.audit_max_coulomb_excess) = saved


def velocity_gradient(ps: ParticleSet, grid: NeighborGrid, a: int):
    """Strain-rate and spin-rate tensors of particle ``a`` (2x2 each)."""
    from .particles import neighbors as _neighbors
    L = np.zeros((2, 2))
    xa = ps.pos[a]
    va = ps.vel[a]
    for b, dx, r in _neighbors(grid, ps, a):
        gw = grad_w_factor(r, ps.h) * dx
        dv = ps.vel[b] - va
        L += (ps.mass[b] / ps.rho[b]) * np.outer(dv, gw)
    eps = 0.5 * (L + L.T)
    spin = 0.5 * (L - L.T)
    return eps, spin


def density_rate(ps: ParticleSet, grid: NeighborGrid, a: int) -> float:
    """Continuity-equation density rate of particle ``a``."""
    from .particles import neighbors as _neighbors
    va = ps.vel[a]
    dr = 0.0
    for b, dx, r in _neighbors(grid, ps, a):
        gw = grad_w_factor(r, ps.h) * dx
        dv = va - ps.vel[b]
        dr += ps.mass[b] * float(dv @ gw)
    return dr


def apply_boundaries(world: World) -> World:
    """Velocity constraints: pinned statics, no-slip base band, free-slip walls."""
    ps = world.ps
    if ps.n == 0:
        return world
    if np.any(world.static_mask):
        ps.vel[world.static_mask] = 0.0
    if world.base_y is not None:
        band = ps.pos[:, 1] < world.base_y + world.band
        pin = band & world.soil_mask
        if np.any(pin):
            ps.vel[pin] = 0.0
    if world.left_wall is not None:
        m = ps.pos[:, 0] < world.left_wall + world.band
        if np.any(m):
            ps.vel[m, 0] = 0.0
    if world.right_wall is not None:
        m = ps.pos[:, 0] > world.right_wall - world.band
        if np.any(m):
            ps.vel[m, 0] = 0.0
    return world


def _clamp_positions(world: World):
    ps = world.ps
    if ps.n == 0:
        return
    if world.left_wall is not None:
        np.maximum(ps.pos[:, 0], world.left_wall, out=ps.pos[:, 0])
    if world.right_wall is not None:
        np.minimum(ps.pos[:, 0], world.right_wall, out=ps.pos[:, 0])


def step(world: World, dt: float | None = None) -> World:
    """Advance the coupled world one leapfrog step."""
    vmax = world.max_speed()
    if dt is None:
        ctl = world.controls
        dt = ctl.cfl_factor * world.ps.h / (world.c_sound + vmax)
        dt = min(dt, ctl.dt_max)
    half = 0.5 * dt
    ps = world.ps

    # first half-kick with the stored accelerations
    if ps.n:
        ps.vel += world.acc * half
    if world.n_blocks:
        world.B_V += world.B_acc * half
        world.B_om += world.B_alpha * half
    if world.damping_active and world.controls.damping_coefficient > 0.0:
        f = math.exp(-world.controls.damping_coefficient * dt)
        if ps.n:
            ps.vel *= f
        if world.n_blocks:
            world.B_V *= f
            world.B_om *= f
    apply_boundaries(world)

    # drift
    if ps.n:
        ps.pos += ps.vel * dt
        _clamp_positions(world)
    if world.n_blocks:
        world.B_R += world.B_V * dt
        world.B_th += world.B_om * dt
        world._sync_block_particles()

    # neighbor maintenance (vmax from the step start bounds this step's
    # motion: the half-kick changes speeds only marginally at CFL scales,
    # and the skin trigger keeps a 2x safety margin)
    world.disp_acc += world.max_speed() * dt
    if world.disp_acc > 0.5 * world.skin:
        world._rebuild_grid()
    else:
        world._refresh_ghost_kinematics()

    # rates, constitutive, forces
    if ps.n:
        world._rates_phase()
        m = world.material
        _pass_constitutive(ps.stress, ps.eps_p, ps.rho, world.drho,
                           world.Lxx, world.Lxy, world.Lyx, world.Lyy, ps.kind,
                           dt, m.shear_modulus, m.bulk_modulus,
                           m.alpha_phi, m.k_c, m.alpha_psi,
                           m.density(max(world.g_mag, 1e-12)),
                           world.stab.artificial_stress_eps,
                           world.Rxx, world.Ryy, world.Rxy, world.has_R,
                           world.bad)
        if world.bad.any():
            p = int(np.argmax(world.bad))
            raise NumericalAbort("density/stress left the stable range",
                                 step=world.step_index, time=world.time,
                                 particle=p)
        world._refresh_ghost_state()
        world._refresh_ghost_R()
    world._forces_phase(dt)

    # second half-kick
    if ps.n:
        ps.vel += world.acc * half
    if world.n_blocks:
        world.B_V += world.B_acc * half
        world.B_om += world.B_alpha * half
    apply_boundaries(world)

    world.time += dt
    world.step_index += 1
    if world.step_index % _FINITE_CHECK_EVERY == 0:
        if ps.n and not (np.all(np.isfinite(ps.vel)) and np.all(np.isfinite(ps.pos))):
            bad = ~np.isfinite(ps.vel).all(axis=1)
            p = int(np.argmax(bad)) if bad.any() else None
            raise NumericalAbort("non-finite particle state",
                                 step=world.step_index, time=world.time,
                                 particle=p)
        if world.n_blocks and not (np.all(np.isfinite(world.B_R))
                                   and np.all(np.isfinite(world.B_V))):
            raise NumericalAbort("non-finite block state",
                                 step=world.step_index, time=world.time)
    return world
