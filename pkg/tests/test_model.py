import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from maxplus.model import (
    DriftedBmSpec,
    ExponentialJump,
    GbmSpec,
    LevySpec,
    ModelError,
    PointMassJump,
    check_martingale_condition,
    delta_from_gamma,
    delta_of,
    gamma_bm,
    gamma_levy_root,
    gamma_of,
    laplace_exponent,
)


def test_gamma_of_examples():
    assert gamma_of(GbmSpec(0.5, 1.0)) == 2.0
    assert gamma_of(GbmSpec(0.0, 0.3)) == 1.0
    assert gamma_bm(DriftedBmSpec(0.5, 1.0)) == 1.0


def test_delta_reduces_to_gamma_without_killing():
    assert delta_from_gamma(2.0, 0.0, 1.0) == 2.0


def test_delta_killed_example():
    assert delta_of(GbmSpec(0.5, 1.0), 1.5) == 3.0


def test_delta_refuses_infinite_mean():
    with pytest.raises(ModelError):
        delta_from_gamma(1.0, 0.0, 1.0)
    # killing restores integrability even at gamma = 1
    assert delta_from_gamma(1.0, 0.5, 1.0) > 1.0


@given(
    st.floats(1.0, 10.0), st.floats(0.0, 5.0), st.floats(0.1, 3.0)
)
def test_delta_is_root_above_gamma(gamma, beta, sigma):
    if beta == 0 and gamma <= 1:
        return
    d = delta_from_gamma(gamma, beta, sigma)
    assert d >= gamma
    assert d * d - gamma * d - 2 * beta / sigma**2 == pytest.approx(0.0, abs=1e-9 * max(1.0, d * d))


def test_invalid_specs():
    with pytest.raises(ModelError):
        GbmSpec(0.5, 0.0)
    with pytest.raises(ModelError):
        GbmSpec(-0.1, 1.0)
    with pytest.raises(ModelError):
        PointMassJump(1.0, 0.5)
    with pytest.raises(ModelError):
        ExponentialJump(1.0, -1.0)


def test_laplace_exponent_pure_diffusion_closed_form():
    spec = LevySpec(a=-0.3, sigma=0.7)
    for lam in (0.5, 1.0, 2.5):
        assert laplace_exponent(spec, lam) == pytest.approx(-0.3 * lam + 0.245 * lam * lam, rel=1e-14)
    assert laplace_exponent(spec, 0.0) == 0.0
    with pytest.raises(ModelError):
        laplace_exponent(spec, -1.0)


def test_laplace_exponent_matches_quadrature_for_exponential_jumps():
    from scipy import integrate

    theta, rate = 2.5, 0.8
    j = ExponentialJump(rate, theta)
    spec = LevySpec(a=0.1, sigma=0.4, jumps=(j,))
    lam = 1.7
    # Lévy measure rate*theta*e^{theta y} dy on y < 0
    dens = lambda y: rate * theta * math.exp(theta * y)
    jump_part, _ = integrate.quad(lambda y: (math.exp(lam * y) - 1 - lam * y * (y > -1)) * dens(y), -np.inf, 0)
    expected = 0.1 * lam + 0.5 * 0.16 * lam * lam + jump_part
    assert laplace_exponent(spec, lam) == pytest.approx(expected, rel=1e-10)


def test_martingale_constructor():
    spec = LevySpec.martingale(0.6, (ExponentialJump(1.0, 3.0), PointMassJump(0.5, -0.2)), r=0.3)
    ok, resid = check_martingale_condition(spec)
    assert ok and resid < 1e-12


def test_gamma_levy_root_pure_diffusion():
    for r, sigma in [(0.5, 1.0), (0.1, 0.3), (2.0, 1.5)]:
        spec = LevySpec.martingale(sigma, (), r)
        assert gamma_levy_root(spec) == pytest.approx(1 + 2 * r / sigma**2, abs=1e-10)


def test_gamma_levy_root_requires_negative_kappa_at_one():
    spec = LevySpec.martingale(1.0, (), r=0.0)
    with pytest.raises(ModelError):
        gamma_levy_root(spec)


@given(st.floats(0.05, 2.0), st.floats(0.2, 2.0), st.floats(0.1, 3.0), st.floats(0.5, 10.0))
def test_gamma_levy_root_is_a_root(r, sigma, rate, theta):
    spec = LevySpec.martingale(sigma, (ExponentialJump(rate, theta),), r)
    g = gamma_levy_root(spec)
    assert g > 1
    assert abs(laplace_exponent(spec, g)) <= 1e-12 * max(1.0, spec.sigma**2 * g * g)
