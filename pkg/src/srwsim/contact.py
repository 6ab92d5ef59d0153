"""Spring-dashpot soft contact with a Coulomb friction cap.

Applies wherever at least one side of a pair is a rigid-block boundary
particle: soil-block, block-block, block-base and block-stopper.  Soil-soil
interaction goes through the SPH stress sum instead.

A pair is active on overlap, d < (h_a + h_i)/2, with the overlap depth
delta_n = (h_a + h_i)/2 - d.  The normal spring is Hertzian
(K delta_n^{3/2}); its dashpot uses the overlap-linearized stiffness
K sqrt(delta_n) so the damping coefficient is dimensionally a force per
velocity and vanishes at contact onset.  The total normal force is clamped
at zero (dry contact carries no adhesion).  The tangential spring acts on
the accumulated slip integral and is capped by Coulomb's law; on the cap
the stored slip is rescaled so the spring holds exactly the sliding force
(no wind-up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NumericalAbort

#: Center distances below this are treated as catastrophic interpenetration.
MIN_PAIR_DISTANCE = 1.0e-9


@njit(cache=True)
def normal_overlap(d: float, h_a: float, h_i: float) -> float:
    """Overlap depth; positive when the pair is in contact (d < (h_a+h_i)/2)."""
    return 0.5 * (h_a + h_i) - d


@njit(cache=True)
def normal_force_core(delta_n: float, approach_speed: float,
                      e_eff: float, m_eff: float, h_eff: float) -> float:
    """Normal force magnitude >= 0 (repulsive along the center line).

    K delta^{3/2} plus near-critical damping on the approach speed; the sum
    is clamped at zero so the dashpot can never turn the contact adhesive.
    """
    if delta_n <= 0.0:
        return 0.0
    k_ai = e_eff * math.sqrt(h_eff) / 3.0
    sq = math.sqrt(delta_n)
    spring = k_ai * delta_n * sq
    c_n = 2.0 * math.sqrt(m_eff * k_ai * sq)
    f = spring + c_n * approach_speed
    return f if f > 0.0 else 0.0


@njit(cache=True)
def shear_force_core(delta_s: float, v_s: float, f_n: float,
                     g_eq: float, mu: float, m_eff: float, h_eff: float,
                     delta_n: float, dt: float):
    """Tangential force + updated slip accumulator.

    Returns (f_s, new_delta_s).  delta_s accumulates the tangential relative
    velocity; the trial spring+dashpot force is capped at mu |f_n| (keeping
    its direction), and on the cap the slip is rescaled to the sliding
    value.
    """
    delta_s = delta_s + v_s * dt
    k_ai = 4.0 * g_eq * math.sqrt(h_eff * delta_n)
    if k_ai <= 0.0:
        return 0.0, 0.0
    c_s = 2.0 * math.sqrt(m_eff * k_ai)
    f_s = -k_ai * delta_s - c_s * v_s
    cap = mu * f_n
    if abs(f_s) > cap:
        f_s = cap if f_s > 0.0 else -cap
        delta_s = -f_s / k_ai
    return f_s, delta_s


@dataclass(frozen=True)
class ContactMaterial:
    """Elastic description of one side of a contact pair."""

    name: str
    young: float
    poisson: float

    def __post_init__(self):
        if self.young <= 0.0:
            raise ValueError(f"contact material young modulus must be positive, got {self.young}")
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError(f"contact material poisson ratio must lie in [0, 0.5), got {self.poisson}")

    @property
    def shear(self) -> float:
        return self.young / (2.0 * (1.0 + self.poisson))


@dataclass(frozen=True)
class ContactParams:
    """Per-pair-class effective stiffness constants and friction coefficient."""

    e_eff: float
    g_eq: float
    mu: float


@dataclass
class ContactState:
    """Persistent per-pair state: accumulated tangential slip."""

    key: tuple
    delta_s: float = 0.0
    active: bool = True


def equivalent_mass(m_a: float, m_i: float) -> float:
    """Harmonic pair mass; a non-finite mass means a static side, in which
    case the mobile particle's mass is used."""
    if not math.isfinite(m_a):
        return m_i
    if not math.isfinite(m_i):
        return m_a
    return m_a * m_i / (m_a + m_i)


def pair_params(mat_a: ContactMaterial, mat_i: ContactMaterial,
                friction: dict) -> ContactParams:
    """Effective pair constants: harmonic-combined moduli + friction lookup.

    ``friction`` maps frozenset({name_a, name_i}) -> mu.
    """
    key = frozenset((mat_a.name, mat_i.name))
    if key not in friction:
        raise KeyError(f"no friction coefficient registered for pair {sorted(key)}")
    e_eff = mat_a.young * mat_i.young / (mat_a.young + mat_i.young)
    g_eq = mat_a.shear * mat_i.shear / (mat_a.shear + mat_i.shear)
    return ContactParams(e_eff=e_eff, g_eq=g_eq, mu=friction[key])


def detect(x_a: np.ndarray, x_i: np.ndarray, h_a: float, h_i: float):
    """Return the overlap depth delta_n, or None when the pair is separated.

    Coincident centers abort the run (the contact model cannot produce a
    direction, and such states only arise after an instability).
    """
    x_a = np.asarray(x_a, float)
    x_i = np.asarray(x_i, float)
    d = math.hypot(x_i[0] - x_a[0], x_i[1] - x_a[1])
    if d < MIN_PAIR_DISTANCE:
        raise NumericalAbort("coincident contact pair (catastrophic interpenetration)")
    delta = normal_overlap(d, h_a, h_i)
    return delta if delta > 0.0 else None


def normal_force(delta_n: float, approach_speed: float, params: ContactParams,
                 m_eff: float, h_eff: float) -> float:
    """Normal force magnitude (N/m); repulsive along the center line."""
    if delta_n < 0.0:
        raise ValueError(f"overlap must be non-negative, got {delta_n}")
    return normal_force_core(delta_n, approach_speed, params.e_eff, m_eff, h_eff)


def shear_force(state: ContactState, v_s: float, f_n: float,
                params: ContactParams, m_eff: float, h_eff: float,
                delta_n: float, dt: float) -> float:
    """Signed tangential force along the current tangent; updates ``state``."""
    f_s, new_ds = shear_force_core(state.delta_s, v_s, f_n, params.g_eq,
                                   params.mu, m_eff, h_eff, delta_n, dt)
    state.delta_s = new_ds
    return f_s
