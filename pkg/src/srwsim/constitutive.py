"""Drucker-Prager elasto-plastic stress update (plane strain).

Pointwise, per-particle material model: non-associated flow, a plastic
multiplier from the consistency condition, and a Jaumann objective rate so
the law is invariant under rigid rotation.  Stress sign convention is
compression-negative throughout.  Plane strain: the out-of-plane normal
stress ``szz`` is carried because the invariants include it.

The spin contribution inside :func:`update_stress` is applied as an exact
incremental rotation (orthogonal ``Q = exp(W dt)``) rather than the additive
first-order term: an additive spin update drifts the stress invariants by
O(dtheta^2) per step, which ruins objectivity over finite rotations, while
the rotational composition preserves I1 and J2 to rounding.
:func:`stress_rate` still exposes the additive rate form, which is what the
plastic-consistency identity is stated in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import NumericalAbort

#: sqrt(J2) below ``J2_FLOOR_FACTOR * G`` drops the deviatoric plastic term
#: (the flow direction s/sqrt(J2) is singular at the apex).
J2_FLOOR_FACTOR = 1.0e-12

#: Yield gate: plastic flow is evaluated when f >= -gate, with
#: gate = YIELD_GATE_FACTOR * (G + k_c).  States returned by the drift
#: correction sit on the surface to rounding, so the band only needs to
#: absorb round-off.
YIELD_GATE_FACTOR = 1.0e-9


@njit(cache=True)
def dp_constants_core(c: float, phi: float):
    t = math.tan(phi)
    den = math.sqrt(9.0 + 12.0 * t * t)
    return t / den, 3.0 * c / den


@njit(cache=True)
def invariants_core(sxx: float, syy: float, szz: float, sxy: float):
    """Return (I1, J2, dev_xx, dev_yy, dev_zz, dev_xy)."""
    i1 = sxx + syy + szz
    m = i1 / 3.0
    dxx = sxx - m
    dyy = syy - m
    dzz = szz - m
    j2 = 0.5 * (dxx * dxx + dyy * dyy + dzz * dzz) + sxy * sxy
    return i1, j2, dxx, dyy, dzz, sxy


@njit(cache=True)
def yield_core(sxx: float, syy: float, szz: float, sxy: float,
               alpha_phi: float, k_c: float) -> float:
    i1, j2, _, _, _, _ = invariants_core(sxx, syy, szz, sxy)
    return alpha_phi * i1 + math.sqrt(j2) - k_c


@njit(cache=True)
def lamdot_core(sxx: float, syy: float, szz: float, sxy: float,
                exx: float, eyy: float, exy: float,
                G: float, K: float, alpha_phi: float, alpha_psi: float) -> float:
    """Raw consistency-condition plastic multiplier rate (no clamping).

    The deviatoric term is dropped below the sqrt(J2) floor (apex states
    are handled by the drift correction instead).
    """
    _, j2, dxx, dyy, dzz, dxy = invariants_core(sxx, syy, szz, sxy)
    evol = exx + eyy  # plane strain: ezz = 0
    sqj2 = math.sqrt(j2)
    num = 3.0 * alpha_phi * K * evol
    if sqj2 > J2_FLOOR_FACTOR * G:
        # s : eps_dot; the xy pair appears twice in the contraction
        s_e = dxx * exx + dyy * eyy + 2.0 * dxy * exy
        num += (G / sqj2) * s_e
    den = 9.0 * alpha_phi * K * alpha_psi + G
    return num / den


@njit(cache=True)
def stress_rate_core(sxx: float, syy: float, szz: float, sxy: float,
                     exx: float, eyy: float, exy: float, w: float,
                     lamdot: float,
                     G: float, K: float, alpha_psi: float):
    """Additive stress rate: Jaumann spin terms + elastic + plastic flow.

    ``w`` is the xy component of the spin-rate tensor,
    w = (du_x/dy - du_y/dx) / 2.
    """
    evol = exx + eyy
    third = evol / 3.0
    # deviatoric strain rate (plane strain: ezz = 0 -> dev zz = -evol/3)
    dexx = exx - third
    deyy = eyy - third
    dezz = -third

    rxx = 2.0 * G * dexx + K * evol
    ryy = 2.0 * G * deyy + K * evol
    rzz = 2.0 * G * dezz + K * evol
    rxy = 2.0 * G * exy

    if lamdot != 0.0:
        _, j2, dxx, dyy, dzz, dxy = invariants_core(sxx, syy, szz, sxy)
        sqj2 = math.sqrt(j2)
        rxx -= lamdot * 3.0 * K * alpha_psi
        ryy -= lamdot * 3.0 * K * alpha_psi
        rzz -= lamdot * 3.0 * K * alpha_psi
        if sqj2 > J2_FLOOR_FACTOR * G:
            fac = lamdot * G / sqj2
            rxx -= fac * dxx
            ryy -= fac * dyy
            rzz -= fac * dzz
            rxy -= fac * dxy

    # spin terms: sigma^{ag} w^{bg} + sigma^{gb} w^{ag} with w^{xy} = w
    rxx += 2.0 * sxy * w
    ryy -= 2.0 * sxy * w
    rxy += (syy - sxx) * w
    return rxx, ryy, rzz, rxy


@njit(cache=True)
def drift_correct_core(sxx: float, syy: float, szz: float, sxy: float,
                       alpha_phi: float, k_c: float):
    """Pull an inadmissible state back to the yield surface.

    Radial return at fixed I1 (deviator scaling) when the surface is
    reachable; otherwise snap to the apex (I1 = k_c/alpha_phi, deviator 0).
    """
    i1, j2, dxx, dyy, dzz, dxy = invariants_core(sxx, syy, szz, sxy)
    sqj2 = math.sqrt(j2)
    f = alpha_phi * i1 + sqj2 - k_c
    if f <= 0.0:
        return sxx, syy, szz, sxy
    rad = k_c - alpha_phi * i1
    if rad >= 0.0:
        if sqj2 > 0.0:
            scale = rad / sqj2
            m = i1 / 3.0
            return m + dxx * scale, m + dyy * scale, m + dzz * scale, dxy * scale
        return sxx, syy, szz, sxy
    # apex / tension zone: alpha_phi > 0 guaranteed here (rad < 0 needs it)
    m = k_c / alpha_phi / 3.0
    return m, m, m, 0.0


@njit(cache=True)
def update_stress_core(sxx: float, syy: float, szz: float, sxy: float,
                       exx: float, eyy: float, exy: float, w: float,
                       dt: float,
                       G: float, K: float, alpha_phi: float, k_c: float,
                       alpha_psi: float):
    """Advance the stress one explicit step; returns new state + lam*dt.

    Material (strain-driven) increment first, then the exact incremental
    rotation from the spin, then the drift correction.
    """
    f0 = yield_core(sxx, syy, szz, sxy, alpha_phi, k_c)
    gate = YIELD_GATE_FACTOR * (G + k_c)
    lam = 0.0
    if f0 >= -gate:
        lam = lamdot_core(sxx, syy, szz, sxy, exx, eyy, exy,
                          G, K, alpha_phi, alpha_psi)
        if lam < 0.0:
            lam = 0.0
    rxx, ryy, rzz, rxy = stress_rate_core(sxx, syy, szz, sxy,
                                          exx, eyy, exy, 0.0, lam,
                                          G, K, alpha_psi)
    nxx = sxx + dt * rxx
    nyy = syy + dt * ryy
    nzz = szz + dt * rzz
    nxy = sxy + dt * rxy

    theta = w * dt
    if theta != 0.0:
        c = math.cos(theta)
        s = math.sin(theta)
        a11 = c * nxx + s * nxy
        a12 = c * nxy + s * nyy
        a21 = -s * nxx + c * nxy
        a22 = -s * nxy + c * nyy
        nxx = a11 * c + a12 * s
        nxy = -a11 * s + a12 * c
        nyy = -a21 * s + a22 * c

    nxx, nyy, nzz, nxy = drift_correct_core(nxx, nyy, nzz, nxy, alpha_phi, k_c)
    return nxx, nyy, nzz, nxy, lam * dt


@dataclass(frozen=True)
class MaterialParams:
    """Elastic constants plus Drucker-Prager constants of the soil.

    Angles in radians; stresses in Pa; ``unit_weight`` in N/m^3.
    """

    young_modulus: float
    poisson_ratio: float
    cohesion: float
    friction_angle: float
    dilatancy_angle: float
    unit_weight: float
    shear_modulus: float = field(init=False)
    bulk_modulus: float = field(init=False)
    alpha_phi: float = field(init=False)
    k_c: float = field(init=False)
    alpha_psi: float = field(init=False)

    def __post_init__(self):
        if self.young_modulus <= 0.0:
            raise ValueError(f"young_modulus must be positive, got {self.young_modulus}")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in [0, 0.5), got {self.poisson_ratio}")
        if self.cohesion < 0.0:
            raise ValueError(f"cohesion must be non-negative, got {self.cohesion}")
        if not 0.0 <= self.dilatancy_angle <= self.friction_angle < math.pi / 2.0:
            raise ValueError(
                "angles must satisfy 0 <= dilatancy <= friction < pi/2, got "
                f"psi={self.dilatancy_angle}, phi={self.friction_angle}")
        if self.unit_weight <= 0.0:
            raise ValueError(f"unit_weight must be positive, got {self.unit_weight}")
        g = self.young_modulus / (2.0 * (1.0 + self.poisson_ratio))
        k = self.young_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))
        aphi, kc = dp_constants_core(self.cohesion, self.friction_angle)
        apsi, _ = dp_constants_core(0.0, self.dilatancy_angle)
        object.__setattr__(self, "shear_modulus", g)
        object.__setattr__(self, "bulk_modulus", k)
        object.__setattr__(self, "alpha_phi", aphi)
        object.__setattr__(self, "k_c", kc)
        object.__setattr__(self, "alpha_psi", apsi)

    def density(self, gravity_magnitude: float = 9.81) -> float:
        """Reference density rho0 = unit_weight / |g| (kg/m^3)."""
        return self.unit_weight / gravity_magnitude

    @property
    def k0(self) -> float:
        """Elastic at-rest lateral stress ratio nu / (1 - nu)."""
        return self.poisson_ratio / (1.0 - self.poisson_ratio)


@dataclass
class StressState:
    """Cauchy stress (Pa, compression negative) + accumulated plastic strain."""

    sxx: float = 0.0
    syy: float = 0.0
    szz: float = 0.0
    sxy: float = 0.0
    eps_p_acc: float = 0.0

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.sxx, self.sxy, 0.0],
                         [self.sxy, self.syy, 0.0],
                         [0.0, 0.0, self.szz]])

    def components(self):
        return self.sxx, self.syy, self.szz, self.sxy


@dataclass
class RateInput:
    """Symmetric strain-rate and antisymmetric spin-rate tensors (1/s, 2x2)."""

    strain_rate: np.ndarray
    spin_rate: np.ndarray

    def __post_init__(self):
        self.strain_rate = np.asarray(self.strain_rate, dtype=float)
        self.spin_rate = np.asarray(self.spin_rate, dtype=float)
        if self.strain_rate.shape != (2, 2) or self.spin_rate.shape != (2, 2):
            raise ValueError("strain_rate and spin_rate must be 2x2 tensors")
        if not np.allclose(self.strain_rate, self.strain_rate.T):
            raise ValueError("strain_rate must be symmetric")
        if not np.allclose(self.spin_rate, -self.spin_rate.T):
            raise ValueError("spin_rate must be antisymmetric")

    @property
    def w_xy(self) -> float:
        """Spin component w^{xy} = (du_x/dy - du_y/dx)/2."""
        return float(self.spin_rate[0, 1])


def dp_constants(c: float, phi: float):
    """Drucker-Prager constants (alpha_phi, k_c) from cohesion and friction."""
    if c < 0.0:
        raise ValueError(f"cohesion must be non-negative, got {c}")
    if not 0.0 <= phi < math.pi / 2.0:
        raise ValueError(f"friction angle must lie in [0, pi/2), got {phi}")
    return dp_constants_core(float(c), float(phi))


def invariants_of(s: StressState):
    """First invariant, second deviatoric invariant, and the deviator (3x3)."""
    i1, j2, dxx, dyy, dzz, dxy = invariants_core(*s.components())
    dev = np.array([[dxx, dxy, 0.0], [dxy, dyy, 0.0], [0.0, 0.0, dzz]])
    return i1, j2, dev


def yield_value(s: StressState, m: MaterialParams) -> float:
    """f = alpha_phi I1 + sqrt(J2) - k_c; negative inside the elastic domain."""
    return yield_core(*s.components(), m.alpha_phi, m.k_c)


def plastic_multiplier(s: StressState, r: RateInput, m: MaterialParams,
                       clamp: bool = True) -> float:
    """Consistency-condition plastic multiplier rate (1/s).

    Clamped at zero by default (negative values mean elastic unloading);
    pass ``clamp=False`` for the raw algebraic value.
    """
    e = r.strain_rate
    lam = lamdot_core(*s.components(), e[0, 0], e[1, 1], e[0, 1],
                      m.shear_modulus, m.bulk_modulus, m.alpha_phi, m.alpha_psi)
    if clamp and lam < 0.0:
        return 0.0
    return lam


def stress_rate(s: StressState, r: RateInput, m: MaterialParams,
                plastic: bool) -> np.ndarray:
    """Additive stress rate tensor (3x3, Pa/s) per the Jaumann-rate law."""
    lam = plastic_multiplier(s, r, m) if plastic else 0.0
    e = r.strain_rate
    rxx, ryy, rzz, rxy = stress_rate_core(*s.components(),
                                          e[0, 0], e[1, 1], e[0, 1], r.w_xy,
                                          lam, m.shear_modulus, m.bulk_modulus,
                                          m.alpha_psi)
    return np.array([[rxx, rxy, 0.0], [rxy, ryy, 0.0], [0.0, 0.0, rzz]])


def update_stress(s: StressState, r: RateInput, m: MaterialParams,
                  dt: float) -> StressState:
    """Advance one step and drift-correct back onto the yield surface."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    e = r.strain_rate
    nxx, nyy, nzz, nxy, dlam = update_stress_core(
        *s.components(), e[0, 0], e[1, 1], e[0, 1], r.w_xy, dt,
        m.shear_modulus, m.bulk_modulus, m.alpha_phi, m.k_c, m.alpha_psi)
    if not (math.isfinite(nxx) and math.isfinite(nyy)
            and math.isfinite(nzz) and math.isfinite(nxy)):
        raise NumericalAbort("non-finite stress after update")
    return StressState(nxx, nyy, nzz, nxy, s.eps_p_acc + dlam)
