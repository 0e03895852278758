import math

import numpy as np
import pytest

from mlab import peano
from mlab.dynamics import (
    BrownianDynamics,
    Dynamics,
    DynamicsError,
    GirsanovDynamics,
    LinearDynamics,
    Observable,
    PeanoDynamics,
    get_observable,
    make_dynamics,
)
from mlab.pathcore import RandomSource
from mlab.semigroup import (
    EstimateRefused,
    HorizonTooShort,
    InconclusiveEstimate,
    SemigroupError,
    estimate_Pt,
    generator_fd,
    integral_identity_residual,
    martingale_problem_residual,
    resolvent,
    resolvent_identity_residual,
    richardson_weights,
    semigroup_curve,
)


class _Exploding(BrownianDynamics):
    """Brownian paths with a fixed share of rows blown up."""

    def __init__(self, share):
        self.share = share

    def paths(self, x, grid, n_paths, rng):
        out = super().paths(x, grid, n_paths, rng)
        out[: int(self.share * n_paths), -1] = np.nan
        return out


def test_time_zero_is_exact():
    e = estimate_Pt(BrownianDynamics(), 0.3, "cos", 0.0)
    assert e.value == math.cos(0.3)
    assert e.std_error == 0.0


def test_peano_expectation_matches_sampling():
    dyn = PeanoDynamics("exponential(1)")
    exact = estimate_Pt(dyn, 0.0, "x", 2.0)
    assert exact.exact
    paths = dyn.paths(0.0, dyn.grid_for(2.0), 20_000, RandomSource(1))[:, -1]
    assert abs(paths.mean() - exact.value) < 3 * paths.std(ddof=1) / math.sqrt(paths.size)


def test_estimates_refuse_small_or_broken_ensembles():
    with pytest.raises(SemigroupError):
        estimate_Pt(BrownianDynamics(), 0.0, "cos", 1.0, n_paths=50)
    with pytest.raises(EstimateRefused):
        estimate_Pt(_Exploding(0.01), 0.0, "cos", 0.1, n_paths=1000)
    ok = estimate_Pt(_Exploding(0.0005), 0.0, "cos", 0.1, n_paths=2000)
    assert ok.aborted == 1 and ok.n == 1999


def test_independent_seeds_agree():
    dyn = BrownianDynamics()
    a = estimate_Pt(dyn, 0.2, "cos", 0.5, 2000, RandomSource(1))
    b = estimate_Pt(dyn, 0.2, "cos", 0.5, 2000, RandomSource(2))
    assert abs(a.value - b.value) < 3 * math.hypot(a.std_error, b.std_error)
    assert abs(a.value - math.cos(0.2) * math.exp(-0.25)) < 3 * a.std_error


def test_curve_shares_one_ensemble():
    m, se = semigroup_curve(BrownianDynamics(), 0.0, "x2", [0.1, 0.2, 0.4], 2000, RandomSource(3))
    assert np.all(np.abs(m - [0.1, 0.2, 0.4]) < 3 * se)


def test_constant_resolvent():
    r = resolvent(PeanoDynamics(), 0.0, "one", 2.0)
    assert abs(r.value - 0.5) <= r.combined_error + 1e-15
    r = resolvent(BrownianDynamics(), 0.0, "one", 2.0, n_nodes=16, n_paths=200)
    assert abs(r.value - 0.5) <= r.combined_error + 1e-12


def test_peano_resolvent_matches_j_functional():
    dyn = PeanoDynamics("exponential(2)")
    r = resolvent(dyn, 0.0, "x", 1.0)
    assert r.value == pytest.approx(peano.j_functional(1.0, "x", peano.DelayLaw.exponential(2.0)), abs=1e-8)


def test_resolvent_guards():
    with pytest.raises(SemigroupError):
        resolvent(BrownianDynamics(), 0.0, "x2", 1.0)
    with pytest.raises(HorizonTooShort):
        resolvent(PeanoDynamics(), 0.5, "cos", 1.0, horizon=2.0)
    with pytest.raises(SemigroupError):
        resolvent(PeanoDynamics(), 0.5, "cos", 0.0)


@pytest.mark.parametrize("x", [0.0, 0.5])
def test_peano_resolvent_identity(x):
    res = resolvent_identity_residual(PeanoDynamics(), x, "cos", 1.0, 2.0)
    assert res.residual < 1e-8


@pytest.mark.parametrize("x", [0.0, 0.5])
def test_peano_degenerate_identity(x):
    res = resolvent_identity_residual(PeanoDynamics(), x, "x", 1.0, 1.0)
    assert res.degenerate
    assert res.residual < 1e-6


def test_girsanov_identity_small_ensemble():
    dyn = GirsanovDynamics(0.25, dt=1e-2)
    res = resolvent_identity_residual(dyn, 1.0, "cos", 1.0, 2.0, n_paths=1000, rng=RandomSource(4), tol=1e-3)
    assert res.n == 1000
    assert res.within(3.0)


def test_richardson_weights():
    w = richardson_weights([1e-2, 1e-3])
    assert w.sum() == pytest.approx(1.0)
    # exact on D(eps) = a + b eps
    assert w @ (2.0 + 5.0 * np.array([1e-2, 1e-3])) == pytest.approx(2.0)


def test_generator_fd_on_deterministic_flow():
    g = generator_fd(PeanoDynamics(), 0.5, "x", [1e-2, 1e-3])
    assert g.exact
    assert g.value == pytest.approx(float(peano.vector_field(0.5)), abs=1e-6)


def test_generator_fd_brownian():
    g = generator_fd(BrownianDynamics(), 0.0, "x2", [1e-2, 1e-3], 4000, RandomSource(5))
    assert g.conclusive
    assert abs(g.value - 1.0) < 3 * g.std_error


def test_generator_fd_inconclusive_is_reported():
    g = generator_fd(BrownianDynamics(), 0.0, "x", [1e-2, 1e-3], 2000, RandomSource(6))
    assert g.status == "inconclusive"
    with pytest.raises(InconclusiveEstimate):
        g.require()
    with pytest.raises(SemigroupError):
        generator_fd(BrownianDynamics(), 0.0, "x", [1e-3, 1e-2])


def test_martingale_residual_deterministic():
    dyn = PeanoDynamics()
    obs = get_observable("x")
    rep = martingale_problem_residual(dyn, 0.5, "x", dyn.generator(obs), [(0.25, 0.5), (0.5, 1.0)])
    assert rep.n_samples == 1
    assert rep.max_abs_z == 0.0


def test_martingale_residual_detects_wrong_generator():
    dyn = BrownianDynamics()
    dyn.dt = 1e-2
    obs = get_observable("x2")
    pairs = [(0.25, 0.5), (0.5, 1.0)]
    good = martingale_problem_residual(dyn, 0.0, "x2", dyn.generator(obs), pairs, 2000, RandomSource(7))
    assert good.passes(3.0)
    bad = martingale_problem_residual(dyn, 0.0, "x2", lambda x: obs.d2(x), pairs, 2000, RandomSource(7))
    assert not bad.passes(3.0)


def test_integral_identity():
    dyn = PeanoDynamics()
    obs = get_observable("x2")
    val, se = integral_identity_residual(dyn, 0.3, "x2", dyn.generator(obs), 1.5)
    assert se == 0.0 and abs(val) < 1e-10
    ou = LinearDynamics(1.0, 1.0)
    ou.dt = 1e-2
    val, se = integral_identity_residual(ou, 0.5, "cos", ou.generator(get_observable("cos")), 1.0,
                                         n_paths=2000, rng=RandomSource(8))
    assert abs(val) < 3 * se


def test_observables_and_factory():
    assert get_observable("abs_ratio")(np.array([-1.0]))[0] == 0.5
    with pytest.raises(DynamicsError):
        get_observable("sqrt")
    with pytest.raises(DynamicsError):
        make_dynamics("heat")
    assert isinstance(make_dynamics("girsanov", alpha=0.3), GirsanovDynamics)
    with pytest.raises(DynamicsError):
        GirsanovDynamics(kind="delayed")
    assert PeanoDynamics().sup_norm("x2") == 1.0
    assert BrownianDynamics().sup_norm("x2") is None
    custom = Observable("half", lambda x: 0.5 * np.ones_like(x), 0.5)
    assert estimate_Pt(PeanoDynamics(), 0.2, custom, 1.0).value == 0.5
    assert isinstance(PeanoDynamics(), Dynamics)
