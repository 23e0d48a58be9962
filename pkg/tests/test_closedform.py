import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, optimize

from maxplus import closedform as cf
from maxplus.model import ModelError


def threshold_value(x, m, gamma, B):
    """Value of 'stop when Z first reaches B' for GBM with exponent gamma."""
    if B <= x:
        return max(x - m, 0.0)
    return (B - m) * (x / B) ** gamma


def best_threshold_value(x, m, gamma):
    res = optimize.minimize_scalar(
        lambda lb: -threshold_value(x, m, gamma, math.exp(lb)),
        bounds=(math.log(max(x, m, 1e-6)), math.log(max(x, m, 1e-6)) + 10),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return max(-res.fun, max(x - m, 0.0))


def test_call_example_exact():
    assert abs(cf.american_call_gbm(1.0, 1.0, 2.0) - 0.25) <= 1e-14


@pytest.mark.parametrize("gamma", [1.5, 2.0, 3.7])
@pytest.mark.parametrize("m", [0.3, 1.0, 4.0])
def test_call_value_matching_at_boundary(gamma, m):
    z = m * gamma / (gamma - 1)
    inner = (m / (gamma - 1)) ** (1 - gamma) * (z / gamma) ** gamma
    assert cf.american_call_gbm(z, m, gamma) == pytest.approx(z - m, rel=1e-14)
    assert inner == pytest.approx(z - m, rel=1e-14)


@pytest.mark.parametrize("x,m,gamma", [(1, 1, 2), (1, 0.2, 2), (2, 1, 3), (0.5, 2, 1.4), (3, 1, 2)])
def test_call_equals_best_threshold_rule(x, m, gamma):
    assert cf.american_call_gbm(x, m, gamma) == pytest.approx(best_threshold_value(x, m, gamma), rel=1e-9)


@given(st.floats(0.1, 5), st.floats(1.05, 6))
def test_call_convex_nonincreasing_in_strike(x, gamma):
    ms = np.linspace(0.01, 6, 200)
    c = np.array([cf.american_call_gbm(x, m, gamma) for m in ms])
    assert np.all(np.diff(c) <= 1e-12)
    assert np.all(np.diff(c, 2) >= -1e-10)
    # Z(m) = C + m is 1-Lipschitz and nondecreasing
    zm = c + ms
    assert np.all(np.diff(zm) >= -1e-12)
    assert np.all(np.diff(zm) <= np.diff(ms) + 1e-12)


def test_call_refuses_gamma_at_most_one():
    with pytest.raises(ModelError):
        cf.american_call_gbm(1, 1, 1.0)


def test_sup_tail_and_mean():
    assert cf.sup_tail(1.0, 2.0, 2.0) == 0.25
    assert cf.sup_tail(1.0, 0.5, 2.0) == 1.0
    assert cf.sup_mean(1.0, 2.0) == 2.0
    with pytest.raises(ModelError):
        cf.sup_mean(1.0, 1.0)


@pytest.mark.parametrize("x,m,delta", [(1, 1, 2), (1, 0.5, 2), (1, 3, 3), (2, 1, 1.5)])
def test_lookback_matches_tail_integral(x, m, delta):
    # E[(S - m)^+] = int_m^inf P[S >= y] dy (plus (x-m) when m < x)
    lo = max(m, x)
    tail, _ = integrate.quad(lambda y: cf.sup_tail(x, y, delta), lo, np.inf, epsabs=1e-13)
    expected = tail + max(x - m, 0.0)
    assert cf.lookback_call(x, m, delta) == pytest.approx(expected, rel=1e-9)


def test_lookback_at_zero_strike_is_mean():
    assert cf.lookback_call(1.0, 0.0, 2.0) == cf.sup_mean(1.0, 2.0)


def test_boundary_specs():
    bs = cf.BoundarySpec.multiplicative(2.0)
    assert cf.exercise_boundary(1.0, bs) == 2.0
    assert bs.index_constant == 0.5
    bm = cf.BoundarySpec.additive(1.0)
    assert cf.exercise_boundary(1.0, bm) == 2.0
    assert bm.index_constant == 1.0


def test_index_constant_killed():
    assert cf.index_constant_killed(2.0, 1.5, 1.0) == 2 / 3
    assert cf.index_constant_killed(2.0, 0.0, 1.0) == 0.5


@pytest.mark.parametrize("z,zs,gamma", [(1, 1, 2), (0.5, 1, 2), (0.2, 3, 3.5), (1.7, 2, 1.3)])
def test_phi_gbm_is_expected_index_maximum(z, zs, gamma):
    b = (gamma - 1) / gamma
    # E[b max(z*, S)] with P[S >= y] = (z/y)^gamma for y >= z
    tail, _ = integrate.quad(lambda y: (z / y) ** gamma, zs, np.inf, epsabs=1e-13)
    assert cf.phi_gbm(z, zs, gamma) == pytest.approx(b * (zs + tail), rel=1e-10)


@pytest.mark.parametrize("z,zs,gamma", [(0, 0, 1), (-1, 0.5, 2), (0.3, 0.3, 0.7)])
def test_phi_bm_is_expected_index_maximum(z, zs, gamma):
    tail, _ = integrate.quad(lambda y: math.exp(-gamma * (y - z)), zs, np.inf, epsabs=1e-13)
    assert cf.phi_bm(z, zs, gamma) == pytest.approx(zs + tail - 1 / gamma, rel=1e-10, abs=1e-12)


def test_phi_on_the_diagonal_is_the_level():
    for g in (1.5, 2, 5):
        assert cf.phi_gbm(1.3, 1.3, g) == pytest.approx(1.3, rel=1e-15)
        assert cf.phi_bm(1.3, 1.3, g) == pytest.approx(1.3, rel=1e-15)


def test_phi_killed_jump_lands_on_index():
    z, zs, delta = 0.7, 1.2, 3.0
    pre, jump = cf.phi_killed(z, zs, delta)
    assert pre + jump == pytest.approx((delta - 1) / delta * zs, rel=1e-14)


def test_phi_rejects_disordered_inputs():
    with pytest.raises(ValueError):
        cf.phi_gbm(2.0, 1.0, 2.0)


@given(st.floats(0.1, 5), st.floats(1.05, 6), st.floats(0.01, 8))
def test_left_derivative_matches_finite_difference(z, gamma, m):
    h = 1e-6 * max(m, 1e-3)
    b = (gamma - 1) / gamma * z
    if abs(m - b) < 10 * h:
        return
    fd = (cf.american_call_gbm(z, m, gamma) - cf.american_call_gbm(z, m - h, gamma)) / h
    assert cf.call_left_derivative(z, m, gamma) == pytest.approx(fd, abs=1e-5)


def test_left_derivative_at_boundary():
    for z, g in [(1, 2), (3, 1.5), (0.4, 4)]:
        m = (g - 1) / g * z
        assert abs(cf.call_left_derivative(z, m, g) + 1.0) <= 1e-12
        assert cf.call_right_derivative(z, m, g) == cf.call_left_derivative(z, m, g)


def test_duality_transform_against_put_optimization():
    x, m, gamma = 1.0, 1.0, 2.0
    d = cf.duality_transform(x, m, gamma)
    assert d.spot == 1.0 and d.strike == 1.0 and d.scale == 1.0
    assert d.boundary == 0.5

    def put_rule(B):
        # discounted lower-barrier hit of 1/Z under the changed measure: (B/y)^(gamma-1)
        if B >= d.spot:
            return d.strike - d.spot
        return (d.strike - B) * (B / d.spot) ** (gamma - 1)

    res = optimize.minimize_scalar(lambda B: -put_rule(B), bounds=(1e-6, d.spot), method="bounded", options={"xatol": 1e-12})
    assert res.x == pytest.approx(d.boundary, abs=1e-6)
    assert d.scale * -res.fun == pytest.approx(cf.american_call_gbm(x, m, gamma), rel=1e-10)


def test_bm_call_matches_threshold_optimization():
    z, m, gamma = 0.0, 0.3, 1.0
    # stop at level B: (B - m) e^{-gamma (B - z)}
    res = optimize.minimize_scalar(lambda B: -(B - m) * math.exp(-gamma * (B - z)), bounds=(m, m + 20), method="bounded", options={"xatol": 1e-12})
    assert res.x == pytest.approx(m + 1 / gamma, abs=1e-6)
    assert cf.american_call_bm(z, m, gamma) == pytest.approx(-res.fun, rel=1e-10)
