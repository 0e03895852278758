import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from mlab.pathcore import (
    DegeneratePredictorError,
    EmpiricalLaw,
    NotMonotoneError,
    PathError,
    QuadratureError,
    RandomSource,
    SamplePath,
    TimeGrid,
    affine_predictors,
    brownian_ensemble,
    constant_predictor,
    dumps_summaries,
    invert_increasing,
    martingale_increment_test,
    mean_summary,
    path_quadrature,
    read_path_csv,
    simulate_brownian,
    trapezoid_cumulative,
    tv_distance,
    write_path_csv,
)


def test_grid_rejects_bad_input():
    for bad in [dict(t0=0, dt=0, n_steps=3), dict(t0=0, dt=-1, n_steps=3),
                dict(t0=0, dt=0.1, n_steps=0), dict(t0=-1, dt=0.1, n_steps=2),
                dict(t0=0, dt=math.nan, n_steps=2)]:
        with pytest.raises(PathError):
            TimeGrid(**bad)


def test_grid_index_and_horizon():
    g = TimeGrid.from_horizon(1.0, 1e-3)
    assert g.n_steps == 1000
    assert g.index_of(0.25) == 250
    assert g.horizon == pytest.approx(1.0)
    with pytest.raises(PathError):
        g.index_of(1.5)


def test_unit_increment_mean():
    g = TimeGrid(0.0, 1.0, 1)
    w = brownian_ensemble(g, 100_000, RandomSource(3))
    assert abs(w[:, 1].mean()) < 3 * math.sqrt(1e-5)


def test_variance_at_two():
    g = TimeGrid(0.0, 1.0, 2)
    w = brownian_ensemble(g, 100_000, RandomSource(4))[:, 2]
    v = w.var(ddof=1)
    # SE of a sample variance of a Gaussian is var * sqrt(2 / (n - 1))
    assert abs(v - 2.0) < 3 * 2.0 * math.sqrt(2 / (w.size - 1))


def test_fixed_seed_is_deterministic():
    g = TimeGrid(0.0, 0.01, 50)
    a = simulate_brownian(g, 2, RandomSource(9))
    b = simulate_brownian(g, 2, RandomSource(9))
    assert np.array_equal(a.values, b.values)
    c = simulate_brownian(g, 2, RandomSource(10))
    assert not np.array_equal(a.values, c.values)


def test_ensemble_rows_match_single_paths():
    g = TimeGrid(0.0, 0.1, 10)
    rng = RandomSource(5, 2)
    w = brownian_ensemble(g, 4, rng)
    for i in range(4):
        assert np.array_equal(w[i], simulate_brownian(g, 1, rng.child(i)).scalar)


def test_children_do_not_collide():
    r = RandomSource(1)
    ids = {r.child(i).stream_id for i in range(200)}
    ids |= {r.child(0).child(i).stream_id for i in range(200)}
    assert len(ids) == 400


def test_sample_path_rejects_nonfinite():
    g = TimeGrid(0.0, 0.1, 2)
    with pytest.raises(PathError):
        SamplePath(g, [0.0, math.nan, 1.0])
    p = SamplePath(g, [0.0, math.nan, math.nan], stop_index=1)
    assert p.stop_index == 1


def test_quadrature_constant_and_linear():
    g = TimeGrid(0.0, 0.1, 10)
    p = SamplePath(g, g.times)
    assert path_quadrature(p, lambda x: np.ones_like(x)) == pytest.approx(1.0, abs=1e-15)
    assert path_quadrature(p, lambda x: x) == pytest.approx(0.5, abs=1e-15)


def test_quadrature_refinement_oracle():
    fine = TimeGrid(0.0, 1e-4, 10_000)
    w = simulate_brownian(fine, 1, RandomSource(7))
    coarse = SamplePath(TimeGrid(0.0, 1e-3, 1000), w.scalar[::10])
    a = path_quadrature(coarse, lambda x: x ** 2)
    b = path_quadrature(w, lambda x: x ** 2)
    assert abs(a - b) < 10 * 1e-3 * (1 + np.max(w.scalar ** 2))


def test_quadrature_reports_bad_node():
    g = TimeGrid(0.0, 0.1, 4)
    p = SamplePath(g, [1.0, 0.5, 0.0, 0.5, 1.0])
    with pytest.raises(QuadratureError) as e:
        path_quadrature(p, lambda x: 1.0 / x)
    assert e.value.index == 2


def test_trapezoid_cumulative_last_value():
    y = np.arange(5.0)
    c = trapezoid_cumulative(y, 0.5)
    assert c[0] == 0.0
    assert c[-1] == pytest.approx(np.trapezoid(y, dx=0.5))


def test_invert_linear():
    g = TimeGrid(0.0, 0.01, 100)
    inv = invert_increasing(SamplePath(g, 2 * g.times))
    assert inv.grid.horizon == pytest.approx(2.0)
    assert np.allclose(inv.scalar, inv.times / 2, atol=1e-12)


def test_invert_square():
    g = TimeGrid(0.0, 0.001, 1000)
    s = g.times ** 2
    s[0] = 0.0
    s = s + 1e-12 * np.arange(s.size)  # strictly increasing at the origin
    inv = invert_increasing(SamplePath(g, s))
    err = np.max(np.abs(inv.scalar - np.sqrt(inv.times)))
    # one cell of the original (domain) grid
    assert err <= g.dt + 1e-9


def test_invert_rejects_flat():
    g = TimeGrid(0.0, 0.1, 3)
    with pytest.raises(NotMonotoneError) as e:
        invert_increasing(SamplePath(g, [0.0, 1.0, 1.0, 2.0]))
    assert e.value.index == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 3.0), min_size=5, max_size=60), st.floats(0.0, 2.0))
def test_double_inversion_is_identity(incs, start):
    n = len(incs)
    g = TimeGrid(0.0, 1.0 / n, n)
    s = start + np.concatenate([[0.0], np.cumsum(incs)])
    back = invert_increasing(invert_increasing(SamplePath(g, s)), n)
    assert np.allclose(back.times, g.times, atol=1e-12)
    range_cell = (s[-1] - s[0]) / n
    assert np.max(np.abs(back.scalar - s)) <= 2 * range_cell + 1e-9


def test_tv_identical_and_disjoint():
    edges = np.linspace(-1, 3, 41)
    a = EmpiricalLaw(np.linspace(0, 1, 500))
    assert tv_distance(a, a, edges) == 0.0
    b = EmpiricalLaw(np.linspace(2, 3, 500))
    assert tv_distance(a, b, edges) == 1.0


def test_tv_shifted_gaussians():
    gen = np.random.default_rng(11)
    a = EmpiricalLaw(gen.standard_normal(1_000_000))
    b = EmpiricalLaw(gen.standard_normal(1_000_000) + 0.5)
    tv = tv_distance(a, b, np.linspace(-6, 6, 201))
    assert tv == pytest.approx(2 * norm.cdf(0.25) - 1, abs=0.01)


def test_tv_rejects_mismatched_edges():
    a = EmpiricalLaw([0.1, 0.2])
    with pytest.raises(PathError):
        tv_distance(a.histogram([0, 1]), a.histogram([0, 0.5, 1]), [0, 1])
    with pytest.raises(PathError):
        a.histogram([0, 0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50),
       st.lists(st.floats(-5, 5), min_size=1, max_size=50))
def test_tv_is_a_bounded_symmetric_distance(x, y):
    edges = np.linspace(-3, 3, 13)
    a, b = EmpiricalLaw(x), EmpiricalLaw(y)
    d = tv_distance(a, b, edges)
    assert 0.0 <= d <= 1.0
    assert d == pytest.approx(tv_distance(b, a, edges))


def _bm(n, dt=1e-3, horizon=1.0, seed=1):
    g = TimeGrid.from_horizon(horizon, dt)
    return g, brownian_ensemble(g, n, RandomSource(seed))


def test_brownian_motion_passes_martingale_test():
    g, w = _bm(10_000)
    rep = martingale_increment_test(w, w, g, [(0.25, 0.5), (0.5, 1.0)], affine_predictors,
                                    theoretical_qv=1.0)
    assert rep.passes(3.0)
    assert rep.qv_within(0.05)


def test_squared_brownian_motion_fails_on_intercept():
    g, w = _bm(10_000)
    rep = martingale_increment_test(w, w ** 2, g, [(0.25, 0.5), (0.5, 1.0)], affine_predictors)
    assert np.all(rep.z_scores[:, 0] > 3)


def test_martingale_test_guards():
    g, w = _bm(1000, dt=0.01)
    with pytest.raises(PathError):
        martingale_increment_test(w[:10], w[:10], g, [(0.2, 0.5)])
    with pytest.raises(PathError):
        martingale_increment_test(w, w, g, [(0.5, 0.5)])
    with pytest.raises(DegeneratePredictorError):
        martingale_increment_test(w, w, g, [(0.0, 0.5)], affine_predictors)
    rep = martingale_increment_test(w, w, g, [(0.0, 0.5)], constant_predictor)
    assert rep.z_scores.shape == (1, 1)


def test_report_serializes():
    g, w = _bm(1000, dt=0.01)
    rep = martingale_increment_test(w, w, g, [(0.2, 0.5)], theoretical_qv=1.0)
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["n_samples"] == 1000
    assert len(d["z_scores"][0]) == 2


def test_path_csv_round_trip():
    g = TimeGrid(0.0, 0.1, 5)
    p = simulate_brownian(g, 2, RandomSource(2))
    buf = io.StringIO()
    write_path_csv(p, buf)
    assert buf.getvalue().splitlines()[0] == "t,x0,x1"
    t, v = read_path_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(t, g.times)
    assert np.array_equal(v, p.values)


def test_summary_dump_is_stable():
    s = [mean_summary("m", [1.0, 2.0, 3.0], seed=4)]
    text = dumps_summaries(s)
    assert json.loads(text)[0]["value"] == 2.0
    assert text == dumps_summaries(s)
