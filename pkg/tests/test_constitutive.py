"""Drucker-Prager stress update: constants, invariants, flow, objectivity."""

import math

import numpy as np
import pytest

from srwsim.constitutive import (MaterialParams, RateInput, StressState,
                                 dp_constants, invariants_of,
                                 plastic_multiplier, stress_rate,
                                 update_stress, yield_value)


@pytest.fixture
def paper_soil():
    return MaterialParams(young_modulus=1.5e6, poisson_ratio=0.3, cohesion=0.0,
                          friction_angle=math.radians(19.8),
                          dilatancy_angle=0.0, unit_weight=23.0e3)


def on_surface_state(m, rng, p_range=(1e3, 1e5)):
    """Random stress state lying exactly on the yield surface."""
    p = rng.uniform(*p_range)
    d = rng.normal(size=3)
    d -= d.mean()
    sxy = rng.normal()
    j2_unit = 0.5 * float(d @ d) + sxy * sxy
    i1 = -3.0 * p
    target = m.k_c - m.alpha_phi * i1
    scale = target / math.sqrt(j2_unit)
    return StressState(-p + d[0] * scale, -p + d[1] * scale,
                       -p + d[2] * scale, sxy * scale)


class TestDpConstants:
    def test_phi_zero_collapses(self):
        a, k = dp_constants(5.0e3, 0.0)
        assert a == 0.0
        assert k == pytest.approx(5.0e3)

    def test_paper_values(self):
        # evaluate tan(phi)/sqrt(9 + 12 tan^2 phi) directly as the oracle
        phi = math.radians(19.8)
        t = math.tan(phi)
        expect = t / math.sqrt(9.0 + 12.0 * t * t)
        a, k = dp_constants(0.0, phi)
        assert a == pytest.approx(expect, rel=1e-12)
        assert a == pytest.approx(0.1108, abs=5e-5)
        assert k == 0.0

    def test_phi30_c10kpa(self):
        a, k = dp_constants(10.0e3, math.radians(30.0))
        assert a == pytest.approx(0.16013, abs=1e-5)
        assert k == pytest.approx(8320.5, abs=0.5)

    def test_monotone_in_phi(self):
        phis = np.linspace(0.0, math.radians(60.0), 40)
        alphas = [dp_constants(0.0, p)[0] for p in phis]
        assert all(b > a for a, b in zip(alphas, alphas[1:]))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            dp_constants(-1.0, 0.1)
        with pytest.raises(ValueError):
            dp_constants(0.0, math.pi / 2)


class TestInvariants:
    def test_hydrostatic(self):
        p = 1.0e4
        s = StressState(-p, -p, -p, 0.0)
        i1, j2, dev = invariants_of(s)
        assert i1 == pytest.approx(-3 * p)
        assert j2 == pytest.approx(0.0, abs=1e-6)
        assert np.allclose(dev, 0.0)

    def test_pure_shear(self):
        tau = 2.5e3
        s = StressState(0.0, 0.0, 0.0, tau)
        i1, j2, _ = invariants_of(s)
        assert i1 == 0.0
        assert j2 == pytest.approx(tau * tau)

    def test_geostatic_base(self, paper_soil):
        # sigma_yy at the base of a 0.15 m column of 23 kN/m3 soil
        from srwsim.scene import _k0_effective
        syy = -23.0e3 * 0.15
        assert syy == -3450.0
        k0 = _k0_effective(paper_soil)
        s = StressState(k0 * syy, syy, k0 * syy, 0.0)
        i1, j2, _ = invariants_of(s)
        assert i1 == pytest.approx(syy * (1.0 + 2.0 * k0), rel=1e-12)
        # the initialization-profile state must be admissible
        assert yield_value(s, paper_soil) <= 0.0


class TestYield:
    def test_zero_stress_cohesionless(self, paper_soil):
        assert yield_value(StressState(), paper_soil) == 0.0

    def test_hydrostatic_compression_negative(self, paper_soil):
        p = 5.0e4
        s = StressState(-p, -p, -p, 0.0)
        f = yield_value(s, paper_soil)
        assert f == pytest.approx(-3 * p * paper_soil.alpha_phi)
        assert f < 0.0

    def test_on_surface_construction(self, paper_soil):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = on_surface_state(paper_soil, rng)
            assert abs(yield_value(s, paper_soil)) < 1e-8 * paper_soil.shear_modulus


class TestPlasticMultiplier:
    def test_psi_zero_denominator_is_G(self, paper_soil):
        # with alpha_psi = 0 the denominator reduces to G: check against a
        # hand-assembled evaluation of the multiplier formula
        rng = np.random.default_rng(11)
        s = on_surface_state(paper_soil, rng)
        eps = np.array([[1e-3, 2e-4], [2e-4, -5e-4]])
        r = RateInput(eps, np.zeros((2, 2)))
        lam = plastic_multiplier(s, r, paper_soil, clamp=False)
        m = paper_soil
        i1, j2, dev = invariants_of(s)
        evol = eps[0, 0] + eps[1, 1]
        s_dot_e = (dev[0, 0] * eps[0, 0] + dev[1, 1] * eps[1, 1]
                   + 2.0 * dev[0, 1] * eps[0, 1])
        expect = (3.0 * m.alpha_phi * m.bulk_modulus * evol
                  + m.shear_modulus / math.sqrt(j2) * s_dot_e) / m.shear_modulus
        assert lam == pytest.approx(expect, rel=1e-12)

    def test_unloading_clamped(self, paper_soil):
        rng = np.random.default_rng(5)
        s = on_surface_state(paper_soil, rng)
        _, _, dev = invariants_of(s)
        # strain rate opposite the deviator direction unloads
        eps = -1e-3 * dev[:2, :2] / np.abs(dev).max()
        eps = 0.5 * (eps + eps.T)
        r = RateInput(eps, np.zeros((2, 2)))
        assert plastic_multiplier(s, r, paper_soil, clamp=False) < 0.0
        assert plastic_multiplier(s, r, paper_soil) == 0.0

    def test_consistency_fdot_zero(self, paper_soil):
        """Using the raw multiplier in the rate equation keeps f stationary."""
        rng = np.random.default_rng(42)
        m = paper_soil
        G = m.shear_modulus
        worst = 0.0
        for _ in range(200):
            s = on_surface_state(m, rng)
            eps = rng.normal(size=(2, 2)) * 1e-3
            eps = 0.5 * (eps + eps.T)
            w = rng.normal() * 1e-3
            r = RateInput(eps, np.array([[0.0, w], [-w, 0.0]]))
            lam = plastic_multiplier(s, r, m, clamp=False)
            rate = stress_rate_with_multiplier(s, r, m, lam)
            # analytic df/dt via chain rule
            i1, j2, dev = invariants_of(s)
            tr = np.trace(rate)
            devr = rate - tr / 3.0 * np.eye(3)
            fdot = m.alpha_phi * tr + float(np.sum(dev * devr)) / (2.0 * math.sqrt(j2))
            enorm = math.sqrt(float(np.sum(eps * eps)))
            worst = max(worst, abs(fdot) / (G * enorm))
        assert worst <= 1e-8


def stress_rate_with_multiplier(s, r, m, lam):
    """Assemble the additive rate with an explicit multiplier value."""
    from srwsim.constitutive import stress_rate_core
    e = r.strain_rate
    rxx, ryy, rzz, rxy = stress_rate_core(*s.components(), e[0, 0], e[1, 1],
                                          e[0, 1], r.w_xy, lam,
                                          m.shear_modulus, m.bulk_modulus,
                                          m.alpha_psi)
    return np.array([[rxx, rxy, 0.0], [rxy, ryy, 0.0], [0.0, 0.0, rzz]])


class TestStressRate:
    def test_zero_rates_zero(self, paper_soil):
        s = StressState(-1e4, -2e4, -1.5e4, 1e3)
        r = RateInput(np.zeros((2, 2)), np.zeros((2, 2)))
        assert np.allclose(stress_rate(s, r, paper_soil, plastic=False), 0.0)

    def test_elastic_uniaxial(self, paper_soil):
        e = 1.0e-3
        r = RateInput(np.array([[e, 0.0], [0.0, 0.0]]), np.zeros((2, 2)))
        rate = stress_rate(StressState(), r, paper_soil, plastic=False)
        K = paper_soil.bulk_modulus
        G = paper_soil.shear_modulus
        assert rate[0, 0] == pytest.approx((K + 4 * G / 3) * e, rel=1e-12)
        assert rate[1, 1] == pytest.approx((K - 2 * G / 3) * e, rel=1e-12)
        assert rate[2, 2] == pytest.approx((K - 2 * G / 3) * e, rel=1e-12)

    def test_spin_terms_match_rotation_derivative(self, paper_soil):
        # additive spin terms equal d/dt of Q sigma Q^T at t=0
        s = StressState(-1e4, -3e4, -2e4, 4e3)
        w = 0.7
        r = RateInput(np.zeros((2, 2)), np.array([[0.0, w], [-w, 0.0]]))
        rate = stress_rate(s, r, paper_soil, plastic=False)
        assert rate[0, 0] == pytest.approx(2 * s.sxy * w, rel=1e-12)
        assert rate[1, 1] == pytest.approx(-2 * s.sxy * w, rel=1e-12)
        assert rate[0, 1] == pytest.approx((s.syy - s.sxx) * w, rel=1e-12)


class TestUpdateStress:
    def test_elastic_substep_consistency(self, paper_soil):
        # far inside the surface a small step matches rate * dt to O(dt^2)
        s = StressState(-5e4, -5.5e4, -5.2e4, 5e2)
        assert yield_value(s, paper_soil) < 0.0
        eps = np.array([[1e-3, 3e-4], [3e-4, -2e-3]])
        r = RateInput(eps, np.zeros((2, 2)))
        dt = 1e-6
        rate = stress_rate(s, r, paper_soil, plastic=False)
        out = update_stress(s, r, paper_soil, dt)
        expect = s.as_matrix() + rate * dt
        scale = np.abs(rate).max() * dt
        assert abs(out.sxx - expect[0, 0]) < 1e-8 * scale + 1e-12
        assert abs(out.sxy - expect[0, 1]) < 1e-8 * scale + 1e-12

    def test_overshoot_gets_corrected(self, paper_soil):
        rng = np.random.default_rng(9)
        m = paper_soil
        tol = 1e-6 * max(m.k_c, m.shear_modulus)
        for _ in range(50):
            s = on_surface_state(m, rng)
            eps = rng.normal(size=(2, 2)) * 5e-2
            eps = 0.5 * (eps + eps.T)
            r = RateInput(eps, np.zeros((2, 2)))
            out = update_stress(s, r, m, 1e-4)
            assert yield_value(out, m) <= tol

    def test_tensile_apex_returns_to_apex(self, paper_soil):
        # cohesionless: apex at I1 = 0; a tensile state must collapse to it
        s = StressState(2e3, 1e3, 1.5e3, 2e2)
        r = RateInput(np.zeros((2, 2)), np.zeros((2, 2)))
        out = update_stress(s, r, paper_soil, 1e-5)
        i1, j2, _ = invariants_of(out)
        assert i1 == pytest.approx(0.0, abs=1e-9)
        assert j2 == pytest.approx(0.0, abs=1e-9)

    def test_objectivity_full_revolution(self, paper_soil):
        s = StressState(-2.0e4, -2.4e4, -2.2e4, 1.0e3)
        assert yield_value(s, paper_soil) < 0.0
        i1_0, j2_0, _ = invariants_of(s)
        n = 1000
        w = -1.0
        dt = 2.0 * math.pi / n
        r = RateInput(np.zeros((2, 2)), np.array([[0.0, w], [-w, 0.0]]))
        for _ in range(n):
            s = update_stress(s, r, paper_soil, dt)
        i1_1, j2_1, _ = invariants_of(s)
        assert abs(i1_1 - i1_0) / abs(i1_0) < 1e-4
        assert abs(j2_1 - j2_0) / j2_0 < 1e-4

    def test_eps_p_acc_non_decreasing(self, paper_soil):
        rng = np.random.default_rng(21)
        s = StressState(-1e4, -1e4, -1e4, 0.0)
        last = 0.0
        for _ in range(500):
            eps = rng.normal(size=(2, 2)) * 2.0
            eps = 0.5 * (eps + eps.T)
            w = rng.normal()
            r = RateInput(eps, np.array([[0.0, w], [-w, 0.0]]))
            s = update_stress(s, r, paper_soil, 1e-4)
            assert s.eps_p_acc >= last
            last = s.eps_p_acc
        assert last > 0.0  # the walk must actually go plastic sometimes

    def test_elastic_limit_matches_closed_form(self, paper_soil):
        # deep hydrostatic compression + tiny strain stays elastic: the
        # update must equal the linear isotropic tangent
        m = paper_soil
        s = StressState(-1e5, -1e5, -1e5, 0.0)
        eps = np.array([[2e-6, 1e-6], [1e-6, -1e-6]])
        r = RateInput(eps, np.zeros((2, 2)))
        dt = 1.0
        out = update_stress(s, r, m, dt)
        K, G = m.bulk_modulus, m.shear_modulus
        evol = eps[0, 0] + eps[1, 1]
        dev = eps - evol / 3.0 * np.eye(2)
        assert out.sxx - s.sxx == pytest.approx(2 * G * dev[0, 0] + K * evol, rel=1e-9)
        assert out.syy - s.syy == pytest.approx(2 * G * dev[1, 1] + K * evol, rel=1e-9)
        assert out.sxy - s.sxy == pytest.approx(2 * G * eps[0, 1], rel=1e-9)

    def test_rejects_bad_dt(self, paper_soil):
        r = RateInput(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            update_stress(StressState(), r, paper_soil, 0.0)


class TestMaterialParams:
    def test_derived_moduli(self, paper_soil):
        assert paper_soil.shear_modulus == pytest.approx(1.5e6 / 2.6, rel=1e-12)
        assert paper_soil.bulk_modulus == pytest.approx(1.5e6 / (3 * 0.4), rel=1e-12)
        assert paper_soil.density(9.81) == pytest.approx(23.0e3 / 9.81)

    def test_alpha_psi_same_formula(self):
        psi = math.radians(10.0)
        m = MaterialParams(1e6, 0.3, 0.0, math.radians(30.0), psi, 20e3)
        a_ref, _ = dp_constants(0.0, psi)
        assert m.alpha_psi == pytest.approx(a_ref, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            MaterialParams(-1.0, 0.3, 0.0, 0.3, 0.0, 23e3)
        with pytest.raises(ValueError):
            MaterialParams(1e6, 0.5, 0.0, 0.3, 0.0, 23e3)
        with pytest.raises(ValueError):
            MaterialParams(1e6, 0.3, -5.0, 0.3, 0.0, 23e3)
        with pytest.raises(ValueError):
            MaterialParams(1e6, 0.3, 0.0, 0.2, 0.3, 23e3)  # psi > phi

    def test_rate_input_validation(self):
        with pytest.raises(ValueError):
            RateInput(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            RateInput(np.zeros((2, 2)), np.array([[0.0, 1.0], [1.0, 0.0]]))
