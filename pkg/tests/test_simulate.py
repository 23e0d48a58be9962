import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from maxplus import simulate as sim
from maxplus.model import (
    DriftedBmSpec,
    ExponentialJump,
    ExponentialKill,
    FixedSteps,
    GbmSpec,
    Infinite,
    LevySpec,
    PointMassJump,
)
from maxplus.rng import RngPolicy, chunk_ranges
from maxplus.stopping import agree, mc_summary


def drifted_max_tail(y, mu, sigma, T):
    """P[max_{t<=T} (mu t + sigma W_t) >= y] by the reflection principle."""
    s = sigma * math.sqrt(T)
    return norm.cdf((-y + mu * T) / s) + math.exp(2 * mu * y / sigma**2) * norm.cdf((-y - mu * T) / s)


def test_same_seed_same_paths():
    spec = GbmSpec(0.5, 1.0)
    a = sim.simulate_batch(spec, FixedSteps(1.0, 50), 50, RngPolicy(1), np.arange(10))
    b = sim.simulate_batch(spec, FixedSteps(1.0, 50), 50, RngPolicy(1), np.arange(10))
    c = sim.simulate_batch(spec, FixedSteps(1.0, 50), 50, RngPolicy(2), np.arange(10))
    assert np.array_equal(a.values, b.values) and np.array_equal(a.segment_max, b.segment_max)
    assert not np.array_equal(a.values, c.values)


def test_path_does_not_depend_on_batch_composition():
    spec = GbmSpec(0.5, 1.0)
    rng = RngPolicy(3)
    full = sim.simulate_batch(spec, FixedSteps(1.0, 20), 20, rng, np.arange(8))
    part = sim.simulate_batch(spec, FixedSteps(1.0, 20), 20, rng, np.array([5, 2]))
    assert np.array_equal(full.values[[5, 2]], part.values)


def test_thread_count_does_not_change_results(monkeypatch):
    spec = GbmSpec(0.5, 1.0)
    monkeypatch.setenv("MAXPLUS_THREADS", "1")
    a = sim.sample_suprema(spec, Infinite(), 5000, 50, RngPolicy(4), chunk=512)
    monkeypatch.setenv("MAXPLUS_THREADS", "4")
    b = sim.sample_suprema(spec, Infinite(), 5000, 50, RngPolicy(4), chunk=512)
    assert np.array_equal(a.sup, b.sup) and np.array_equal(a.terminal, b.terminal)


def test_batch_matches_single_path_pipeline():
    spec = GbmSpec(0.5, 1.0)
    rng = RngPolicy(5)
    batch = sim.simulate_batch(spec, Infinite(), 40, rng, np.arange(3), t_trunc=4.0)
    for i in range(3):
        p = sim.simulate_gbm(spec, 4.0, 40, rng, i)
        p = sim.augment_tail(sim.bridge_sup_correct(p, spec, rng), spec, rng)
        assert np.array_equal(p.values, batch.values[i])
        assert np.array_equal(p.running_sup, batch.running_sup()[i])
        assert p.total_sup == batch.total_sup()[i]
        assert p.sup_mode == sim.EXACT_TAIL


def test_killed_single_path_matches_batch():
    spec = GbmSpec(0.5, 1.0)
    rng = RngPolicy(6)
    batch = sim.simulate_batch(spec, ExponentialKill(1.5), 30, rng, np.arange(4))
    for i in range(4):
        p = sim.simulate_killed_gbm(spec, 1.5, 30, rng, i)
        assert p.killed
        assert np.array_equal(p.times, batch.times[i])
        assert np.array_equal(p.values, batch.values[i])


@settings(max_examples=30)
@given(st.integers(0, 2**32), st.integers(1, 60), st.floats(0.1, 2.0))
def test_path_invariants(seed, n, sigma):
    spec = GbmSpec(0.2, sigma)
    rng = RngPolicy(seed)
    p = sim.bridge_sup_correct(sim.simulate_gbm(spec, 1.0, n, rng), spec, rng)
    p.check_invariants()
    # the bridge maximum dominates both endpoints of its segment
    assert np.all(p.segment_max >= np.maximum(p.values[:-1], p.values[1:]) * (1 - 1e-15))
    assert p.values[0] == 1.0


def test_bridge_sup_matches_reflection_formula_on_coarse_grid():
    mu, sigma, T, y = -0.3, 1.0, 1.0, 0.8
    spec = DriftedBmSpec(mu=-mu, sigma=sigma, z0=0.0)
    batch = sim.simulate_batch(spec, FixedSteps(T, 8), 8, RngPolicy(8), np.arange(40_000))
    exact = drifted_max_tail(y, mu, sigma, T)
    corrected = mc_summary((batch.finite_sup() >= y).astype(float))
    grid = mc_summary((batch.values.max(axis=1) >= y).astype(float))
    assert agree(corrected, exact)
    # grid monitoring on 8 steps misses crossings by a wide margin
    assert grid.estimate < exact - 10 * grid.se


def test_gbm_bridge_is_exact_for_any_drift():
    spec = GbmSpec(r=1.5, sigma=0.6)
    T, y = 2.0, 1.3
    batch = sim.simulate_batch(spec, FixedSteps(T, 4), 4, RngPolicy(9), np.arange(40_000))
    exact = drifted_max_tail(math.log(y), -spec.r - 0.5 * spec.sigma**2, spec.sigma, T)
    assert agree(mc_summary((batch.finite_sup() >= y).astype(float)), exact)


def test_pareto_tail_law():
    g = np.random.default_rng(0)
    s = sim.sup_tail_pareto(np.ones(200_000), 2.0, g)
    assert np.all(s >= 1.0)
    for y in (1.5, 2.0, 4.0):
        assert agree(mc_summary((s >= y).astype(float)), y**-2.0)
    with pytest.raises(ValueError):
        sim.sup_tail_pareto(1.0, 1.0, g)


def test_exponential_tail_law():
    g = np.random.default_rng(1)
    s = sim.sup_tail_exponential(np.zeros(200_000), 1.5, g)
    assert agree(mc_summary(s), 1 / 1.5)


def test_drifted_bm_supremum_mean():
    spec = DriftedBmSpec(mu=0.5, sigma=1.0, z0=0.0)
    s = sim.sample_suprema(spec, Infinite(), 20_000, 100, RngPolicy(10))
    # sup of BM with drift -mu is Exp(2 mu / sigma^2)
    assert agree(mc_summary(s.sup), 1.0)


def test_kill_time_mean():
    t = [sim.sample_kill_time(2.0, RngPolicy(0).generator(i, "kill")) for i in range(20_000)]
    assert agree(mc_summary(np.array(t)), 0.5)


def test_levy_path_structure():
    spec = LevySpec.martingale(0.3, (PointMassJump(5.0, -0.2),), r=0.2)
    p = sim.simulate_levy(spec, 1.0, 20, RngPolicy(11), 0)
    p.check_invariants()
    jumps = sim.levy_jump_count(p, 20)
    assert p.times.size == 21 + jumps
    # the level just before a jump and the level after differ by the jump size
    ratio = p.values[1:] / p.left_limits
    at_jump = ~np.isclose(ratio, 1.0)
    assert np.count_nonzero(at_jump) == jumps
    assert np.allclose(ratio[at_jump], math.exp(-0.2))


def test_levy_jump_count_is_poisson():
    spec = LevySpec.martingale(0.3, (ExponentialJump(2.0, 3.0),), r=0.2)
    counts = np.array([sim.levy_jump_count(sim.simulate_levy(spec, 1.5, 5, RngPolicy(12), i), 5) for i in range(4000)])
    assert agree(mc_summary(counts.astype(float)), 3.0)


def test_levy_supremum_tail_uses_root():
    from maxplus.model import gamma_levy_root

    spec = LevySpec.martingale(0.5, (ExponentialJump(1.0, 4.0),), r=0.5)
    g = gamma_levy_root(spec)
    s = sim.sample_suprema(spec, Infinite(), 4000, 50, RngPolicy(14))
    assert agree(mc_summary((s.sup >= 2.0).astype(float)), 2.0**-g)


def test_terminal_levels():
    spec = GbmSpec(0.5, 1.0)
    s = sim.sample_suprema(spec, Infinite(), 10, 10, RngPolicy(1))
    assert np.all(s.terminal == 0.0)
    bm = sim.sample_suprema(DriftedBmSpec(0.5, 1.0), Infinite(), 10, 10, RngPolicy(1))
    assert np.all(np.isneginf(bm.terminal))
    fx = sim.sample_suprema(spec, FixedSteps(1.0, 10), 10, 10, RngPolicy(1))
    assert np.all(fx.terminal > 0) and np.all(fx.sup >= fx.terminal)


def test_csv_output():
    rng = RngPolicy(1)
    paths = [sim.simulate_gbm(GbmSpec(0.5, 1.0), 1.0, 3, rng, i) for i in range(2)]
    buf = io.StringIO()
    sim.write_paths_csv(paths, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "path,time,value,running_sup"
    assert len(lines) == 1 + 2 * 4


def test_chunk_ranges():
    assert chunk_ranges(10, 5, 2) == [(10, 12), (12, 14), (14, 15)]


def test_rng_streams_are_independent_by_purpose():
    rng = RngPolicy(1)
    a = rng.generator(0, "path").random(5)
    b = rng.generator(0, "bridge").random(5)
    c = rng.generator(1, "path").random(5)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    with pytest.raises((KeyError, ValueError)):
        rng.generator(0, "nonsense")
