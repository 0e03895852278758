import math

import numpy as np
import pytest

from mlab.girsanov import (
    ClockSpec,
    GirsanovError,
    StickyParam,
    TestFunction,
    additive_functional,
    ensemble,
    generator_action,
    initial_flat_length,
    invariant_histogram,
    local_time_estimate,
    occupation_near_zero,
    sigma_alpha,
    simulate_absorbed,
    simulate_damped,
    simulate_damped_ensemble,
    simulate_delayed,
    simulate_no_delay,
    time_at_zero,
)
from mlab.pathcore import EmpiricalLaw, RandomSource, SamplePath, TimeGrid, brownian_ensemble, simulate_brownian, tv_distance

ALPHA = 0.25


def test_sigma_values():
    assert sigma_alpha(ALPHA, 0.0) == 0.0
    assert sigma_alpha(ALPHA, 1.0) == pytest.approx(0.5, abs=1e-15)
    assert sigma_alpha(ALPHA, 16.0) == pytest.approx(2 / 3, abs=1e-15)
    assert sigma_alpha(ALPHA, -16.0) == sigma_alpha(ALPHA, 16.0)


def test_alpha_range_is_enforced():
    for a in [0.0, 0.5, -0.1, 0.7]:
        with pytest.raises(GirsanovError):
            sigma_alpha(a, 1.0)
    with pytest.raises(GirsanovError):
        StickyParam(-1.0)
    with pytest.raises(GirsanovError):
        ClockSpec(0.0)


def test_time_change_with_unit_coefficient():
    g = TimeGrid(0.0, 1e-3, 1000)
    W = simulate_brownian(g, 1, RandomSource(1))
    tc = additive_functional(ALPHA, 0.3, W, sigma=lambda x: np.ones_like(x))
    assert np.allclose(tc.S.scalar, g.times, atol=1e-12)


def test_time_change_far_from_zero():
    g = TimeGrid(0.0, 1e-4, 1000)
    W = simulate_brownian(g, 1, RandomSource(2))
    tc = additive_functional(ALPHA, 10.0, W)
    frozen = g.times[1:] / sigma_alpha(ALPHA, 10.0) ** 2
    assert np.max(np.abs(tc.S.scalar[1:] / frozen - 1)) < 0.05


def test_time_change_inverts():
    g = TimeGrid(0.0, 1e-3, 2000)
    for seed in range(5):
        W = simulate_brownian(g, 1, RandomSource(seed))
        tc = additive_functional(ALPHA, 0.5, W)
        cell = max(np.max(np.diff(tc.S.scalar)), tc.T.grid.dt)
        assert tc.compose_error() <= 2 * cell


def test_local_time_zero_away_from_level():
    g = TimeGrid(0.0, 0.01, 100)
    p = SamplePath(g, 5.0 + 0.01 * np.sin(g.times))
    assert np.all(local_time_estimate(p, 0.0, 0.1).scalar == 0.0)


def test_local_time_of_brownian_motion():
    g = TimeGrid(0.0, 1e-4, 10_000)
    w = brownian_ensemble(g, 2000, RandomSource(3))
    inside = np.abs(w[:, :-1]) < 1e-2
    L = np.sum(np.where(inside, np.diff(w, axis=1) ** 2, 0.0), axis=1) / 2e-2
    assert L.mean() == pytest.approx(math.sqrt(2 / math.pi), rel=0.05)
    single = local_time_estimate(SamplePath(g, w[0]), 0.0, 1e-2).scalar[-1]
    assert single == pytest.approx(L[0])


def test_zero_delays_give_the_no_delay_path():
    g = TimeGrid(0.0, 1e-2, 100)
    for seed in range(3):
        r = RandomSource(seed)
        a = simulate_no_delay(ALPHA, 0.2, g, r)
        b = simulate_delayed(ALPHA, 0.2, ClockSpec(1.0), g, r, zero_delays=True)
        assert np.array_equal(a.scalar, b.scalar)


def test_absorbed_from_zero_is_zero():
    g = TimeGrid(0.0, 1e-2, 50)
    p = simulate_absorbed(ALPHA, 0.0, g, RandomSource(1))
    assert np.all(p.values == 0.0)


def test_ensemble_rows_match_single_paths():
    g = TimeGrid(0.0, 1e-2, 50)
    rng = RandomSource(4)
    e = ensemble("delayed", ALPHA, 0.0, g, 3, rng, rate=2.0)
    for i in range(3):
        assert np.array_equal(e[i], simulate_delayed(ALPHA, 0.0, ClockSpec(2.0), g, rng.child(i)).scalar)
    with pytest.raises(GirsanovError):
        ensemble("sticky", ALPHA, 0.0, g, 1, rng)


def test_delayed_spends_time_at_zero_and_no_delay_does_not():
    g = TimeGrid(0.0, 1e-2, 100)
    rng = RandomSource(5)
    d = ensemble("delayed", ALPHA, 0.0, g, 200, rng, rate=1.0)
    n = ensemble("no_delay", ALPHA, 0.0, g, 200, rng)
    assert time_at_zero(d, g.dt).mean() > 0.1
    assert time_at_zero(n[:, 1:], g.dt).max() == 0.0
    assert initial_flat_length(d, g.dt).mean() > 0.0
    occ = occupation_near_zero(n, g.dt, 0.05)
    assert 0.0 < occ.value < 1.0


def test_generator_action_examples():
    sq = TestFunction(lambda x: x * x, lambda x: 2.0)
    ab = TestFunction(abs, lambda x: 0.0, slope_left=-1.0, slope_right=1.0)
    assert generator_action(0.0, sq, 1.0, ALPHA) == pytest.approx(0.5)
    assert generator_action(2.0, ab, 0.0, ALPHA) == pytest.approx(1.0)
    assert generator_action(math.inf, sq, 0.0, ALPHA) == 0.0
    assert generator_action(math.inf, ab, 0.0, ALPHA) == 0.0
    with pytest.raises(GirsanovError):
        generator_action(1.0, sq, 0.0, ALPHA)


def test_damped_without_noise_decays():
    g = TimeGrid(0.0, 1e-3, 2000)
    p = simulate_damped(ALPHA, 1.0, 0.0, g, RandomSource(1), sigma_scale=0.0)
    assert np.max(np.abs(p.scalar - np.exp(-g.times))) < 2e-3
    assert "c0_selection_assumed" in p.flags


def test_damped_mean_vanishes():
    g = TimeGrid(0.0, 1e-2, 1000)
    x = simulate_damped_ensemble(ALPHA, 1.0, 0.0, g, 2000, RandomSource(2))[:, -1]
    assert abs(x.mean()) < 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_damped_row_matches_single_path():
    g = TimeGrid(0.0, 1e-2, 100)
    rng = RandomSource(6)
    e = simulate_damped_ensemble(ALPHA, 1.0, math.inf, g, 2, rng)
    assert np.array_equal(e[1], simulate_damped(ALPHA, 1.0, math.inf, g, rng.child(1)).scalar)


def test_damped_guards():
    with pytest.raises(GirsanovError):
        simulate_damped(ALPHA, 1.0, 0.0, TimeGrid(0.0, 0.5, 4), RandomSource(1))
    with pytest.raises(GirsanovError):
        simulate_damped(ALPHA, 1.0, 2.0, TimeGrid(0.0, 0.1, 4), RandomSource(1))


def test_absorbing_damped_from_zero_stays():
    g = TimeGrid(0.0, 1e-2, 100)
    assert np.all(simulate_damped(ALPHA, 0.0, math.inf, g, RandomSource(1)).values == 0.0)
    law = invariant_histogram(ALPHA, math.inf, 0.0, 5.0, 1e-2, RandomSource(1), n_paths=10, x0=0.0)
    assert law.atom_mass == 1.0


def test_absorbing_atom_grows_with_horizon():
    a = invariant_histogram(ALPHA, math.inf, 0.0, 100.0, 1e-2, RandomSource(3), n_paths=50)
    b = invariant_histogram(ALPHA, math.inf, 0.0, 200.0, 1e-2, RandomSource(3), n_paths=50)
    assert 0.0 < a.atom_mass < 1.0
    assert b.atom_mass > a.atom_mass


def test_non_sticky_invariant_law_is_stationary():
    edges = np.linspace(-3, 3, 61)
    a = invariant_histogram(ALPHA, 0.0, 10.0, 60.0, 1e-2, RandomSource(4), n_paths=100, thin=10)
    b = invariant_histogram(ALPHA, 0.0, 10.0, 60.0, 1e-2, RandomSource(5), n_paths=100, thin=10)
    assert a.atom_mass == 0.0
    assert tv_distance(a, b, edges) < 0.05
