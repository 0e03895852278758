"""Acceptance suite: one PASS/FAIL line per criterion.

Lines are printed at the end of the pytest run (see conftest.py) and also
when the file is executed directly with ``python3 tests/test_acceptance.py``.
"""
import math
import sys

import numpy as np
import pytest

from mlab import dynamics as dyn
from mlab import girsanov, nse, stroockyor
from mlab.cli import parse_config_text, resolve
from mlab.pathcore import RandomSource, TimeGrid
from mlab.semigroup import generator_fd

RESULTS: dict[int, tuple[bool, str]] = {}

TITLES = {
    1: "Peano Markov characterization",
    2: "Peano extremality formula",
    3: "Girsanov quadratic variation and occupation refinement",
    4: "Girsanov delayed solution Chapman-Kolmogorov",
    5: "non-equivalent invariant measures (damped atoms)",
    6: "Stroock-Yor submartingale suite and kernel separation",
    7: "NSE martingale functional M^phi",
    8: "NSE energy balance",
    9: "resolvent identity",
    10: "generator agreement (finite difference vs formal generator)",
    11: "structural invariants",
}


def _record(n: int, checks: list[tuple[str, bool, str]]) -> None:
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{name}={'ok' if passed else 'FAIL'} ({info})" for name, passed, info in checks)
    RESULTS[n] = (ok, detail)
    assert ok, detail


def result_lines() -> list[str]:
    lines = []
    for n in sorted(TITLES):
        if n not in RESULTS:
            lines.append(f"criterion {n:2d} NOT RUN  {TITLES[n]}")
            continue
        ok, detail = RESULTS[n]
        lines.append(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {TITLES[n]}: {detail}")
    return lines


def _experiment(name: str, section: str, seed: int = 1, **params):
    body = "\n".join(f"{k} = {v}" for k, v in params.items())
    text = f"[run]\nexperiment = {name}\nseed = {seed}\n\n[{section}]\n{body}\n"
    cfg = resolve(parse_config_text(text, f"<{name}>"), env={})
    return cfg.experiment.run(cfg.params, cfg.seed)


def _assertion(outcome, name):
    for a in outcome.assertions:
        if a["name"] == name:
            return a
    raise KeyError(name)


def _fmt(a) -> str:
    return f"{a['statistic']}={a['value']:.4g} vs {a['threshold']:.4g}"


# ---------------------------------------------------------------------------


def test_criterion_01_peano_markov():
    laws = "exponential(0), exponential(0.5), exponential(1), exponential(2), exponential(5), exponential(inf)"
    lattice = dict(s="0.25, 0.5, 1, 2, 4", t="0.25, 0.5, 1, 2, 4", f="x, x2, cos")
    good = _experiment("peano-markov", "peano", nu=laws, **lattice)
    checks = [("exponential", good.passed, _fmt(_assertion(good, "markov_defect")))]
    for law in ["uniform(0,2)", "dirac(1)"]:
        bad = _experiment("peano-markov", "peano", nu=law, **lattice)
        worst = _assertion(bad, "markov_defect")["value"]
        checks.append((law, worst > 1e-3, f"max_abs_defect={worst:.4g} > 1e-3"))
    _record(1, checks)


def test_criterion_02_peano_extremality():
    out = _experiment("peano-extremal", "peano")
    a = _assertion(out, "extremality_formula")
    n_rows = len(out.rows)
    _record(2, [("formula", out.passed, _fmt(a)), ("lattice", n_rows == 3 * 2 * 25, f"{n_rows} rows")])


@pytest.mark.slow
def test_criterion_03_girsanov_qv():
    out = _experiment("girsanov-qv", "girsanov")
    _record(3, [("qv", _assertion(out, "qv_consistency")["passed"], _fmt(_assertion(out, "qv_consistency"))),
                ("occupation", _assertion(out, "occupation_refinement")["passed"],
                 _fmt(_assertion(out, "occupation_refinement")))])


@pytest.mark.slow
def test_criterion_04_girsanov_chapman_kolmogorov():
    out = _experiment("girsanov-delay-markov", "girsanov")
    a = _assertion(out, "chapman_kolmogorov")
    _record(4, [("tv", a["passed"], _fmt(a))])


@pytest.mark.slow
def test_criterion_05_invariant_atoms():
    out = _experiment("girsanov-invariant", "girsanov")
    a = _assertion(out, "non_equivalent_invariant_laws")
    _record(5, [("atoms", a["passed"], _fmt(a))])


@pytest.mark.slow
def test_criterion_06_stroock_yor():
    sub = _experiment("sy-submartingale", "stroockyor")
    sf = _experiment("sy-strongfeller", "stroockyor", families="wiener, sticky")
    checks = [(a["name"], a["passed"], _fmt(a)) for a in sub.assertions]
    checks += [(a["name"], a["passed"], _fmt(a)) for a in sf.assertions]
    tv = stroockyor.kernel_tv(stroockyor.KernelSpec("wiener", 1.0, 1.0), stroockyor.KernelSpec("sticky", 1.0, 1.0))
    checks.append(("family_tv", tv > 0.1, f"tv={tv:.4g} > 0.1"))
    _record(6, checks)


@pytest.fixture(scope="module")
def nse_run():
    return _experiment("nse-martingale", "nse", seed=11)


@pytest.mark.slow
def test_criterion_07_nse_martingale(nse_run):
    z, qv = _assertion(nse_run, "martingale_z"), _assertion(nse_run, "martingale_qv")
    _record(7, [("z", z["passed"], _fmt(z)), ("qv", qv["passed"], _fmt(qv))])


@pytest.mark.slow
def test_criterion_08_nse_energy(nse_run):
    t, f = _assertion(nse_run, "energy_truncated_mean_zero"), _assertion(nse_run, "energy_full_supermartingale")
    _record(8, [("truncated", t["passed"], _fmt(t)), ("full", f["passed"], _fmt(f))])


@pytest.mark.slow
def test_criterion_09_resolvent_identity():
    checks = []
    for x in [0.0, 0.5]:
        out = _experiment("resolvent-identity", "semigroup", dynamics="peano", x=x, phi="cos")
        a = _assertion(out, "identity_residual")
        checks.append((f"peano_x{x:g}", a["passed"] and a["value"] < 1e-8, _fmt(a)))
    out = _experiment("resolvent-identity", "semigroup", seed=2, dynamics="girsanov", x=1, phi="cos",
                      ensemble=10_000, dt=0.01, tol=1e-4)
    a = _assertion(out, "identity_residual")
    checks.append(("girsanov", a["passed"] and out.rows[0]["n"] == 10_000, _fmt(a)))
    _record(9, checks)


@pytest.mark.slow
def test_criterion_10_generator():
    checks = []
    out = _experiment("generator-check", "semigroup", seed=3, dynamics="nse", x=0, phi="quadratic",
                      ensemble=10_000, dt=1e-3, horizon=0.01)
    a = _assertion(out, "matches_generator")
    checks.append(("x=0 quadratic", out.passed, _fmt(a)))
    # a nonzero state well inside the region where the cutoff equals 1
    lat = nse.lattice(2)
    noise = nse.NoiseSpec(0.25, lat)
    params = nse.GalerkinParams(1.0, 2, 1e-3, 0.01)
    x1 = nse.SpectralField.random(lat, np.random.default_rng(5), 1.0, 1.0)
    w = float(nse.Stepper(params, nse.CutoffSpec(1.0), noise).w_norm_sq(x1.coeffs[None])[0])
    d = dyn.NSEDynamics(params, nse.CutoffSpec(10.0 * w), noise)
    modes = [nse.ModeRef((1, 0, 0)), nse.ModeRef((0, 1, 1), 1, "sin")]
    conclusive = []
    for k, prof in enumerate(["product", "cosine"]):
        phi = nse.CylinderFunction.named(prof, modes[: nse.CYLINDER_PROFILES[prof].arity], lat)
        g = generator_fd(d, x1, phi, [1e-2, 1e-3], 10_000, RandomSource(20 + k))
        ref = d.formal_generator(phi, x1)
        ok = abs(g.value - ref) <= 3 * g.std_error
        conclusive.append(g.conclusive)
        checks.append((f"x!=0 {prof}", ok, f"fd={g.value:.4g}+-{g.std_error:.2g} vs {ref:.4g}"
                       + ("" if g.conclusive else ", inconclusive")))
    # agreement alone is vacuous when the error bar swallows the value
    checks.append(("x!=0 resolved", any(conclusive), f"conclusive={conclusive}"))
    _record(10, checks)


def test_criterion_11_structural_invariants():
    checks = []
    lat = nse.lattice(2)
    noise = nse.NoiseSpec(0.25, lat)
    params = nse.GalerkinParams(1.0, 2, 1e-3, 0.05)
    st = nse.Stepper(params, nse.CutoffSpec(50.0), noise)
    gen = np.random.default_rng(0)
    u0 = np.stack([nse.SpectralField.random(lat, gen, 1.0, 1.0).coeffs for _ in range(20)])
    run = nse.simulate_ensemble(u0, st, 20, RandomSource(1), store_states=True)
    states = run.states
    real = float(np.max(np.abs(states[:, :, lat.H:] - np.conj(states[:, :, : lat.H]))))
    div = float(np.max(np.abs(np.einsum("nmkj,kj->nmk", states, lat.ks))))
    checks.append(("reality", real <= 1e-12, f"{real:.2g}"))
    checks.append(("incompressibility", div <= 1e-12, f"{div:.2g}"))
    orth = 0.0
    for i in range(20):
        u = nse.SpectralField(lat, states[i, -1])
        b = nse.nonlinearity_B(u, u)
        orth = max(orth, abs(nse.inner(b, u)) / max(1.0, nse.inner(u, u) ** 1.5))
    checks.append(("<B(u,u),u>", orth <= 1e-12, f"{orth:.2g}"))
    mono = True
    for i in range(20):
        norms = st.w_norm_sq(states[i])
        taus = [nse.stopping_time_tau(states[i], R, 0.25, run.grid, lat)
                for R in np.quantile(norms, np.linspace(0.05, 1.0, 15)).tolist() + [norms.max() * 1.01, math.inf]]
        taus = [math.inf if t is None else t for t in taus]
        mono &= all(a <= b for a, b in zip(taus, taus[1:]))
    checks.append(("tau monotone", mono, "20 paths x 17 radii"))
    sig = [girsanov.sigma_alpha(0.25, 0.0), girsanov.sigma_alpha(0.25, 1.0), girsanov.sigma_alpha(0.25, 16.0)]
    sig_ok = sig[0] == 0.0 and abs(sig[1] - 0.5) < 1e-12 and abs(sig[2] - 2 / 3) < 1e-12
    checks.append(("sigma_alpha", sig_ok, f"{sig}"))
    worst = max(abs(stroockyor.kernel_mass(stroockyor.KernelSpec(fam, t, x)) - 1.0)
                for fam in ["wiener", "sticky", "reflected"] for t in [0.1, 1.0, 10.0] for x in [-1.0, 0.0, 2.0])
    checks.append(("kernel normalization", worst <= 1e-10, f"max |mass-1|={worst:.2g}"))
    _record(11, checks)


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
