import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from mlab.pathcore import EmpiricalLaw, RandomSource, TimeGrid, martingale_increment_test, quantile_bin_predictors
from mlab.stroockyor import (
    InadmissibleTestFunction,
    KernelSpec,
    StroockYorError,
    compensated_process,
    kernel_atom,
    kernel_density,
    kernel_mass,
    negative_x,
    registry,
    simulate_ensemble,
    simulate_family,
    sticky_atom,
    strong_feller_modulus,
    submartingale_check,
    wiener_tv_closed_form,
)


def test_wiener_peak():
    assert kernel_density(KernelSpec("wiener", 1.0, 0.0), 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)


def test_reflected_normalization():
    s = KernelSpec("reflected", 1.0, 1.0)
    val, _ = quad(lambda y: kernel_density(s, y), 0, 40, epsabs=1e-13, limit=200)
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("family", ["wiener", "sticky", "reflected"])
def test_kernels_are_normalized(family):
    for t in [0.1, 1.0, 10.0]:
        for x in [-1.0, 0.0, 2.0]:
            assert kernel_mass(KernelSpec(family, t, x)) == pytest.approx(1.0, abs=1e-10)


def test_sticky_atom_is_part_of_the_mass():
    s = KernelSpec("sticky", 1.0, 1.0)
    assert kernel_atom(s) == pytest.approx(sticky_atom(1.0, 1.0))
    assert 0.0 < kernel_atom(s) < 1.0
    assert kernel_atom(KernelSpec("wiener", 1.0, 1.0)) == 0.0


def test_kernel_spec_validation():
    with pytest.raises(StroockYorError):
        KernelSpec("bessel", 1.0, 0.0)
    with pytest.raises(StroockYorError):
        KernelSpec("wiener", 0.0, 0.0)
    with pytest.raises(StroockYorError):
        simulate_family("wiener", 0.0, TimeGrid(0.5, 0.1, 3), RandomSource(0))


def test_reflected_far_from_zero_is_nearly_gaussian():
    g = TimeGrid(0.0, 0.1, 1)
    x = simulate_ensemble("reflected", 2.0, g, 100_000, RandomSource(3))[:, -1]
    edges = np.linspace(0.5, 3.5, 61)
    emp = EmpiricalLaw(x).histogram(edges).probabilities()
    cdf = norm.cdf(edges, loc=2.0, scale=math.sqrt(0.1))
    ref = np.concatenate([[cdf[0]], np.diff(cdf), [1 - cdf[-1]]])
    assert 0.5 * np.abs(emp - ref).sum() < 0.01


def test_wiener_from_zero_is_symmetric():
    g = TimeGrid(0.0, 0.1, 10)
    x = simulate_ensemble("wiener", 0.0, g, 5000, RandomSource(4))[:, -1]
    assert abs(x.mean()) < 3 * x.std(ddof=1) / math.sqrt(x.size)


def test_same_stream_same_path():
    g = TimeGrid(0.0, 0.1, 10)
    for fam in ["wiener", "sticky", "reflected"]:
        a = simulate_family(fam, -0.3, g, RandomSource(2))
        b = simulate_family(fam, -0.3, g, RandomSource(2))
        assert np.array_equal(a.values, b.values)


@pytest.mark.slow
@pytest.mark.parametrize("family,x", [("wiener", 1.0), ("sticky", 1.0), ("reflected", 0.5)])
def test_simulation_matches_kernel(family, x):
    g = TimeGrid(0.0, 0.05, 20)
    y = simulate_ensemble(family, x, g, 100_000, RandomSource(5))[:, -1]
    s = KernelSpec(family, 1.0, x)
    edges = np.linspace(x - 10, x + 10, 201)
    mass = np.array([quad(lambda v: kernel_density(s, v), a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    atom = kernel_atom(s)
    at_zero = float(np.mean(y == 0.0)) if family == "sticky" else 0.0
    h = EmpiricalLaw(y[y != 0.0] if family == "sticky" else y).histogram(edges)
    tv = 0.5 * (np.abs(h.counts / y.size - mass).sum() + abs(at_zero - atom))
    assert tv < 0.02


def test_wiener_drives_phi_x_as_martingale():
    g = TimeGrid(0.0, 1e-2, 100)
    f = registry()["x"]
    paths = simulate_ensemble("wiener", 1.0, g, 4000, RandomSource(6))
    z = compensated_process(paths, g, f)
    rep = martingale_increment_test(paths, z, g, [(0.25, 0.5), (0.5, 1.0)], quantile_bin_predictors(3))
    assert rep.passes(3.0)


def test_negative_x_is_inadmissible():
    with pytest.raises(InadmissibleTestFunction):
        negative_x()


def test_registry_functions_are_admissible():
    reg = registry()
    assert len(reg) == 5
    for f in reg.values():
        assert np.all(f.boundary_slope(np.linspace(0, 5, 11)) >= 0)


def test_reflected_fails_the_boundary_drift():
    g = TimeGrid(0.0, 1e-2, 100)
    rep = submartingale_check("reflected", 1.0, registry()["2t-x"], g, 4000, RandomSource(7))
    assert not rep.passes_one_sided(3.0)


def test_strong_feller_examples():
    assert strong_feller_modulus("sticky", 1.0, 0.3, 0.3) == 0.0
    assert strong_feller_modulus("wiener", 1.0, 0.0, 1.0) == pytest.approx(2 * norm.cdf(0.5) - 1, abs=1e-8)
    assert wiener_tv_closed_form(1.0, 1.0) == pytest.approx(0.38292, abs=1e-5)
    vals = [strong_feller_modulus("reflected", t, 0.0, 0.1) for t in [0.5, 1.0, 2.0]]
    assert 0.0 < vals[1] <= strong_feller_modulus("wiener", 1.0, 0.0, 0.1)
    assert vals[0] > vals[1] > vals[2]


def test_wiener_modulus_is_linear_in_the_gap():
    gaps = np.array([1e-3, 1e-2, 1e-1])
    tv = np.array([strong_feller_modulus("wiener", 1.0, 1.0, 1.0 + d) for d in gaps])
    slope = np.polyfit(np.log(gaps), np.log(tv), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.02)
    assert np.allclose(tv, [wiener_tv_closed_form(1.0, d) for d in gaps], atol=1e-6)
