import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from maxplus.pl import PLConvex, clamp_left, combine, floor_at, max_abs_diff, maximum, vee

finite = st.floats(-5, 5, allow_nan=False)


@st.composite
def pl_functions(draw, max_kinks=4):
    n = draw(st.integers(1, max_kinks))
    bps = sorted(set(round(x, 6) for x in draw(st.lists(finite, min_size=n, max_size=n))))
    inc = draw(st.lists(st.floats(0.05, 1.0), min_size=len(bps), max_size=len(bps)))
    return PLConvex(draw(finite), np.array(bps), np.array(inc))


PROBES = np.linspace(-8, 8, 641)


def test_vee():
    f = vee(2.0)
    assert f(1.0) == 2.0 and f(3.5) == 3.5
    assert f.left_slope(2.0) == 0.0 and f.right_slope(2.0) == 1.0


def test_validation():
    with pytest.raises(ValueError):
        PLConvex(0.0, np.array([1.0, 0.5]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        PLConvex(0.0, np.array([1.0]), np.array([-1.0]))
    with pytest.raises(ValueError):
        PLConvex(math.inf, np.array([]), np.array([]))


@given(st.lists(pl_functions(), min_size=1, max_size=4), st.data())
def test_combine_is_pointwise_mixture(fs, data):
    w = np.array(data.draw(st.lists(st.floats(0.05, 1.0), min_size=len(fs), max_size=len(fs))))
    w /= w.sum()
    g = combine(fs, w)
    expected = sum(p * f(PROBES) for f, p in zip(fs, w))
    assert np.allclose(g(PROBES), expected, atol=1e-10)


@given(pl_functions(), finite)
def test_floor_at_is_pointwise_max(f, z):
    g = floor_at(f, z)
    assert np.allclose(g(PROBES), np.maximum(z, f(PROBES)), atol=1e-10)
    assert g.anchor == max(z, f.anchor)


@given(pl_functions(), pl_functions())
def test_maximum_is_pointwise_max(f, g):
    h = maximum(f, g)
    assert np.allclose(h(PROBES), np.maximum(f(PROBES), g(PROBES)), atol=1e-9)


@given(pl_functions(), finite)
def test_clamp_left(f, level):
    g = clamp_left(f, level)
    assert np.allclose(g(PROBES), f(np.maximum(PROBES, level)), atol=1e-10)
    assert clamp_left(f, -math.inf) is f


@given(pl_functions())
def test_slopes_bracket_difference_quotients(f):
    h = 1e-7
    for m in (-1.3, 0.2, 2.7):
        assert f.left_slope(m) <= (f(m + h) - f(m)) / h + 1e-6
        assert (f(m) - f(m - h)) / h <= f.right_slope(m) + 1e-6


@given(pl_functions(), pl_functions())
def test_max_abs_diff(f, g):
    d = max_abs_diff(f, g)
    grid_d = float(np.max(np.abs(f(PROBES) - g(PROBES))))
    assert d >= grid_d - 1e-12
    if abs(f.total_slope - g.total_slope) <= 1e-12:
        assert d == pytest.approx(grid_d, abs=1e-9) or d <= grid_d + 1e-9
    assert max_abs_diff(f, f) == 0.0
