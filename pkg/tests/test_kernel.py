"""Cubic-spline kernel: normalization, gradient consistency, decay."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from srwsim.kernel import KernelSpec, evaluate, gradient


def unnormalized_spline(q):
    if q >= 2.0:
        return 0.0
    if q < 1.0:
        return 1.0 - 1.5 * q * q + 0.75 * q ** 3
    return 0.25 * (2.0 - q) ** 3


def test_support_boundary_is_zero():
    spec = KernelSpec(h=0.7)
    assert evaluate(2.0 * spec.h, spec) == 0.0
    assert evaluate(2.5 * spec.h, spec) == 0.0


def test_peak_value_matches_quadrature_constant():
    # oracle: normalization fixed by requiring unit integral over the
    # support disk; sigma = 1 / (2 pi \int_0^2 f(q) q dq)
    integral, err = quad(lambda q: unnormalized_spline(q) * 2.0 * math.pi * q, 0.0, 2.0)
    assert err < 1e-10
    sigma = 1.0 / integral
    spec = KernelSpec(h=1.0)
    assert evaluate(0.0, spec) == pytest.approx(sigma, rel=1e-12)
    assert evaluate(0.0, spec) == pytest.approx(0.4547, abs=5e-5)


@pytest.mark.parametrize("h", [0.003, 0.5, 1.0])
def test_midpoint_normalization(h):
    # midpoint rule over [-2h, 2h]^2
    spec = KernelSpec(h=h)
    n = 400
    xs = np.linspace(-2 * h, 2 * h, n, endpoint=False) + 2.0 * h / n
    gx, gy = np.meshgrid(xs, xs)
    r = np.hypot(gx, gy).ravel()
    vals = np.array([evaluate(ri, spec) for ri in r])
    integral = vals.sum() * (4.0 * h / n) ** 2
    assert abs(integral - 1.0) <= 1e-3


def test_gradient_zero_at_origin_and_outside():
    spec = KernelSpec(h=1.0)
    assert np.all(gradient(np.zeros(2), spec) == 0.0)
    assert np.all(gradient(np.array([2.0, 0.1]), spec) == 0.0)


def test_gradient_points_against_displacement():
    spec = KernelSpec(h=1.0)
    for dx in ([0.5, 0.0], [0.3, 0.4], [-0.2, 0.9]):
        g = gradient(np.array(dx), spec)
        assert float(g @ dx) < 0.0


def test_gradient_finite_difference_at_0p7h():
    spec = KernelSpec(h=1.0)
    r = 0.7
    g = gradient(np.array([r, 0.0]), spec)
    eps = 1e-7
    fd = (evaluate(r + eps, spec) - evaluate(r - eps, spec)) / (2 * eps)
    assert g[0] == pytest.approx(fd, rel=1e-6)


def test_gradient_finite_difference_100_random_radii():
    rng = np.random.default_rng(7)
    spec = KernelSpec(h=0.8)
    for _ in range(100):
        r = rng.uniform(1e-3, 2.0 * spec.h * 0.999)
        ang = rng.uniform(0, 2 * math.pi)
        d = np.array([r * math.cos(ang), r * math.sin(ang)])
        g = gradient(d, spec)
        eps = 1e-7 * spec.h
        fd = (evaluate(r + eps, spec) - evaluate(r - eps, spec)) / (2 * eps)
        radial = float(g @ d) / r
        assert radial == pytest.approx(fd, rel=1e-6, abs=1e-12)


@given(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9))
@settings(max_examples=200, deadline=None)
def test_gradient_antisymmetry(x, y):
    spec = KernelSpec(h=1.0)
    d = np.array([x, y])
    assert np.allclose(gradient(d, spec), -gradient(-d, spec), rtol=0, atol=0)


def test_monotone_decay():
    spec = KernelSpec(h=1.3)
    rs = np.linspace(0.0, 2.0 * spec.h, 500)
    vals = [evaluate(r, spec) for r in rs]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_rejects_bad_inputs():
    spec = KernelSpec(h=1.0)
    with pytest.raises(ValueError):
        evaluate(float("nan"), spec)
    with pytest.raises(ValueError):
        evaluate(-0.1, spec)
    with pytest.raises(ValueError):
        gradient(np.array([float("inf"), 0.0]), spec)
    with pytest.raises(ValueError):
        KernelSpec(h=0.0)
    with pytest.raises(ValueError):
        KernelSpec(h=-1.0)


def test_support_radius_property():
    spec = KernelSpec(h=0.25)
    assert spec.support_radius == 0.5
    assert evaluate(0.4999, spec) > 0.0
