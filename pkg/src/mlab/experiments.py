"""Named experiments: parameters, defaults, assertions.

Each experiment reads the keys of one config section, runs single-process
and returns rows for the JSON report, a list of assertions and optional
CSV series. Nothing here touches the clock, so reports are reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from . import girsanov, nse, peano, semigroup, stroockyor
from .pathcore import RandomSource, TimeGrid

REQUIRED = object()


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parameter parsing


def split_list(text: str) -> list[str]:
    """Comma-separated items; commas inside parentheses do not split."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur).strip())
    return [s for s in out if s]


def _float(s: str) -> float:
    v = float(s)
    if math.isnan(v):
        raise ValueError("nan is not allowed")
    return v


PARSERS: dict[str, Callable[[str], object]] = {
    "float": _float,
    "int": int,
    "str": str.strip,
    "floats": lambda s: [_float(v) for v in split_list(s)],
    "strs": split_list,
    "bool": lambda s: {"true": True, "yes": True, "1": True,
                       "false": False, "no": False, "0": False}[s.strip().lower()],
}


def positive(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(x > 0 for x in vals) else "must be positive"


def nonneg(v):
    vals = v if isinstance(v, list) else [v]
    return None if all(x >= 0 for x in vals) else "must be nonnegative"


def one_of(*choices):
    def check(v):
        vals = v if isinstance(v, list) else [v]
        bad = [x for x in vals if x not in choices]
        return None if not bad else f"must be one of {', '.join(choices)}"
    return check


def in_open(lo, hi):
    def check(v):
        return None if lo < v < hi else f"must lie in ({lo:g}, {hi:g})"
    return check


def _laws(v):
    try:
        for s in v:
            peano.DelayLaw.parse(s)
    except (peano.PeanoError, ValueError, TypeError) as e:
        return f"bad delay law: {e}"
    return None


@dataclass(frozen=True)
class Param:
    kind: str
    default: object = REQUIRED
    check: Callable | None = None
    help: str = ""

    @property
    def required(self) -> bool:
        return self.default is REQUIRED

    def parse(self, text: str):
        try:
            value = PARSERS[self.kind](text)
        except (ValueError, KeyError):
            raise ConfigError(f"expected {self.kind}, got {text!r}") from None
        if self.check is not None:
            msg = self.check(value)
            if msg:
                raise ConfigError(msg)
        return value

    def sample_text(self) -> str:
        v = self.default
        if isinstance(v, list):
            return ", ".join(_fmt(x) for x in v)
        if isinstance(v, bool):
            return "true" if v else "false"
        return _fmt(v)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return str(v)


@dataclass
class Outcome:
    rows: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    series: dict = field(default_factory=dict)  # name -> (header, rows)

    def check(self, name: str, passed: bool, statistic: str, value, threshold) -> None:
        self.assertions.append({"name": name, "passed": bool(passed), "statistic": statistic,
                                "value": _jsonable(value), "threshold": _jsonable(threshold)})

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


@dataclass(frozen=True)
class Experiment:
    name: str
    section: str
    description: str
    params: dict
    run: Callable[[dict, int], Outcome]

    @property
    def required_keys(self) -> list[str]:
        return sorted(k for k, p in self.params.items() if p.required)

    def sample_config(self, seed: int = 1) -> str:
        lines = ["[run]", f"experiment = {self.name}", f"seed = {seed}", "", f"[{self.section}]"]
        for k in sorted(self.params):
            p = self.params[k]
            if p.required:
                raise ConfigError(f"{self.name}: no sample value for required key {k}")
            lines.append(f"{k} = {p.sample_text()}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# peano


def run_peano_markov(p: dict, seed: int) -> Outcome:
    out = Outcome()
    worst = 0.0
    for law in p["nu"]:
        fam = peano.SelectionFamily(peano.DelayLaw.parse(law))
        for s in p["s"]:
            for t in p["t"]:
                for f in p["f"]:
                    d = peano.markov_defect(fam, s, t, f)
                    out.rows.append({"nu": fam.delay.label(), "s": s, "t": t, "f": f, "defect": d})
                    worst = max(worst, abs(d))
    out.check("markov_defect", worst < p["tol"], "max_abs_defect", worst, p["tol"])
    out.series["defects"] = (["s", "t", "defect", "nu", "f"],
                             [[r["s"], r["t"], r["defect"], r["nu"], r["f"]] for r in out.rows])
    return out


def run_peano_extremal(p: dict, seed: int) -> Outcome:
    out = Outcome()
    worst = 0.0
    for lam in p["lambda"]:
        for f in p["f"]:
            for a in p["a"]:
                for b in p["b"]:
                    g = peano.extremality_gap(lam, f, a, b)
                    out.rows.append({k: _jsonable(v) for k, v in g.to_dict().items()})
                    worst = max(worst, g.abs_err)
    out.check("extremality_formula", worst < p["tol"], "max_abs_err", worst, p["tol"])
    return out


# ---------------------------------------------------------------------------
# girsanov


def _girsanov_row(alpha, param, statistic, value, se) -> dict:
    return {"alpha": alpha, "param": param, "statistic": statistic, "value": float(value),
            "std_error": float(se)}


def run_girsanov_qv(p: dict, seed: int) -> Outcome:
    out = Outcome()
    a = p["alpha"]
    grid = TimeGrid.from_horizon(p["horizon"], p["dt"])
    res = girsanov.quadratic_variation_check(a, p["x0"], grid, p["ensemble"], RandomSource(seed),
                                             p["substeps"])
    param = f"x0={p['x0']:g}"
    out.rows.append(_girsanov_row(a, param, "qv_ratio", res["ratio"], res["ratio_std_error"]))
    out.check("qv_consistency", abs(res["ratio"] - 1) <= p["tol"], "abs(qv_ratio - 1)",
              abs(res["ratio"] - 1), p["tol"])
    eps = p["eps"]
    fine = girsanov.occupation_near_zero(res["paths"], grid.dt, eps)
    coarse = girsanov.occupation_near_zero(res["paths"], grid.dt, 2 * eps)
    out.rows.append(_girsanov_row(a, param, f"occupation(eps={eps:g})", fine.value, fine.std_error))
    out.rows.append(_girsanov_row(a, param, f"occupation(eps={2 * eps:g})", coarse.value, coarse.std_error))
    ratio = fine.value / coarse.value if coarse.value > 0 else float("nan")
    # occupation density near 0 behaves like |y|^(-2 alpha), so time in (-eps, eps) ~ eps^(1 - 2 alpha)
    out.rows.append(_girsanov_row(a, param, "occupation_ratio", ratio, float("nan")))
    out.rows.append(_girsanov_row(a, param, "occupation_ratio_predicted", 2.0 ** (-(1 - 2 * a)), 0.0))
    out.check("occupation_refinement", fine.value < 2 * coarse.value, "occupation(eps) / occupation(2 eps)",
              ratio, 2.0)
    out.series["qv"] = (["path", "qv", "integral"], [
        [i, float(q), float(s)] for i, (q, s) in enumerate(zip(
            np.sum(np.diff(res["paths"], axis=1) ** 2, axis=1),
            np.trapezoid(girsanov.sigma_alpha(a, res["paths"]) ** 2, dx=grid.dt, axis=1)))
    ])
    return out


def run_girsanov_delay_markov(p: dict, seed: int) -> Outcome:
    out = Outcome()
    a, lam = p["alpha"], p["rate"]
    rng = RandomSource(seed)
    ck = girsanov.chapman_kolmogorov_check(a, lam, p["s"], p["t"], p["dt"], p["ensemble"], rng.child(0),
                                           substeps=p["substeps"])
    param = f"rate={lam:g},s={p['s']:g},t={p['t']:g}"
    out.rows.append(_girsanov_row(a, param, "ck_tv", ck["tv"], float("nan")))
    for k in ("atom_direct", "atom_restarted", "atom_at_s"):
        v = ck[k]
        out.rows.append(_girsanov_row(a, param, k, v, math.sqrt(v * (1 - v) / ck["n_paths"])))
    out.check("chapman_kolmogorov", ck["tv"] <= p["tol"], "tv", ck["tv"], p["tol"])
    # occupation of 0 for each listed rate, from 0 on [0, s + t]
    grid = TimeGrid.from_horizon(p["s"] + p["t"], p["dt"])
    for j, r in enumerate(p["compare_rates"]):
        paths = girsanov.ensemble("delayed", a, 0.0, grid, p["compare_ensemble"], rng.child(1 + j), r,
                                  p["substeps"])
        occ = girsanov.time_at_zero(paths, grid.dt)
        flat = girsanov.initial_flat_length(paths, grid.dt)
        se = lambda v: float(v.std(ddof=1) / math.sqrt(v.size))
        out.rows.append(_girsanov_row(a, f"rate={r:g}", "time_at_zero", occ.mean(), se(occ)))
        out.rows.append(_girsanov_row(a, f"rate={r:g}", "initial_flat_length", flat.mean(), se(flat)))
    return out


def run_girsanov_invariant(p: dict, seed: int) -> Outcome:
    out = Outcome()
    a = p["alpha"]
    laws = {}
    for j, (label, sticky) in enumerate((("absorbed", math.inf), ("no_delay", 0.0))):
        law = girsanov.invariant_histogram(a, sticky, p["burn_in"], p["horizon"], p["dt"],
                                           RandomSource(seed).child(j), p["ensemble"], p["x0"])
        laws[label] = law
        out.rows.append(_girsanov_row(a, f"selection={label}", "atom_mass", law.atom_mass, law.atom_std_error))
    diff = laws["absorbed"].atom_mass - laws["no_delay"].atom_mass
    comb = math.hypot(laws["absorbed"].atom_std_error, laws["no_delay"].atom_std_error)
    out.rows.append(_girsanov_row(a, "absorbed-no_delay", "atom_difference", diff, comb))
    out.check("non_equivalent_invariant_laws", diff > 3 * comb, "atom_difference", diff, 3 * comb)
    edges = np.linspace(-2, 2, 41)
    h = laws["no_delay"].histogram(edges)
    out.series["no_delay_histogram"] = (["x_left", "x_right", "probability"],
                                        [[float(edges[i]), float(edges[i + 1]), float(pr)]
                                         for i, pr in enumerate(h.probabilities()[1:-1])])
    return out


# ---------------------------------------------------------------------------
# stroock-yor


def run_sy_strongfeller(p: dict, seed: int) -> Outcome:
    out = Outcome()
    t, x = p["t"], p["x"]
    worst = 0.0
    for fam in p["families"]:
        for xp in p["xprime"]:
            tv = stroockyor.strong_feller_modulus(fam, t, x, xp)
            out.rows.append({"family": fam, "t": t, "x": x, "xprime": xp, "tv": tv})
            if fam == "wiener":
                worst = max(worst, abs(tv - stroockyor.wiener_tv_closed_form(t, xp - x)))
    if "wiener" in p["families"]:
        out.check("wiener_closed_form", worst < p["closed_form_tol"], "max_abs_err", worst,
                  p["closed_form_tol"])
    others = [f for f in p["families"] if f != "wiener"]
    for fam in others:
        tv = stroockyor.kernel_tv(stroockyor.KernelSpec("wiener", t, x), stroockyor.KernelSpec(fam, t, x))
        out.rows.append({"family": f"wiener-vs-{fam}", "t": t, "x": x, "xprime": x, "tv": tv})
        out.check(f"kernels_differ_{fam}", tv > p["min_family_tv"], "tv", tv, p["min_family_tv"])
    out.series["modulus"] = (["xprime", "tv", "family"],
                             [[r["xprime"], r["tv"], r["family"]] for r in out.rows])
    return out


def run_sy_submartingale(p: dict, seed: int) -> Outcome:
    out = Outcome()
    grid = TimeGrid.from_horizon(p["horizon"], p["dt"])
    tests = stroockyor.registry()
    rng = RandomSource(seed)
    families = list(p["families"]) + [f for f in p["controls"] if f not in p["families"]]
    for j, fam in enumerate(families):
        paths = stroockyor.simulate_ensemble(fam, p["x"], grid, p["ensemble"], rng.child(j), p["substeps"])
        worst = -math.inf
        for name, f in tests.items():
            rep = stroockyor.submartingale_check(fam, p["x"], f, grid, p["ensemble"], rng, paths=paths)
            d = rep.to_dict()
            out.rows.append({"family": fam, "phi": name, "max_one_sided_z": d["max_one_sided_z"],
                             "report": d})
            worst = max(worst, rep.max_one_sided_z)
        if fam in p["families"]:
            out.check(f"submartingale_{fam}", worst <= p["z"], "max_one_sided_z", worst, p["z"])
        else:
            out.check(f"control_detected_{fam}", worst > p["z"], "max_one_sided_z", worst, p["z"])
    return out


# ---------------------------------------------------------------------------
# nse


def _nse_setup(p: dict):
    lat = nse.lattice(p["N"])
    noise = nse.NoiseSpec(p["alpha0"], lat, p["noise_scale"])
    params = nse.GalerkinParams(p["nu"], p["N"], p["dt"], p["horizon"], p["alpha0"])
    return lat, noise, params


def run_nse_martingale(p: dict, seed: int) -> Outcome:
    out = Outcome()
    lat, noise, params = _nse_setup(p)
    st = nse.Stepper(params, nse.CutoffSpec(p["R"]), noise)
    k = tuple(int(v) for v in p["mode"])
    phi = nse.SpectralField.mode(lat, k)
    u0 = nse.SpectralField.random(lat, RandomSource(seed).child(10**6).generator(), p["u0_scale"], 1.0)
    res = nse.martingale_energy_check(u0, st, phi, p["ensemble"], RandomSource(seed))
    m, et, ef = res["martingale"], res["energy_truncated"], res["energy_full"]
    out.rows.append({"functional": "M_phi", "mode": list(k), **m.to_dict()})
    out.rows.append({"functional": "energy_truncated_trace", "trace": res["trace_truncated"], **et.to_dict()})
    out.rows.append({"functional": "energy_full_trace", "trace": res["trace_full"], **ef.to_dict()})
    out.check("martingale_z", m.passes(p["z"]), "max_abs_z", m.max_abs_z, p["z"])
    out.check("martingale_qv", m.qv_within(p["qv_tol"]), "qv_ratio", m.qv_ratio, p["qv_tol"])
    out.check("energy_truncated_mean_zero", et.passes(p["z"]), "max_abs_z", et.max_abs_z, p["z"])
    z_full = float(np.max(ef.z_scores))
    out.check("energy_full_supermartingale", z_full <= p["z"], "max_z", z_full, p["z"])
    return out


# ---------------------------------------------------------------------------
# semigroup


def build_dynamics(p: dict, seed: int):
    name = p["dynamics"]
    if name == "peano":
        return dyn.PeanoDynamics(p["delay"])
    if name == "girsanov":
        return dyn.GirsanovDynamics(p["alpha"], p["selection"], p["rate"] if p["selection"] == "delayed" else None,
                                    p["dt"])
    if name == "stroockyor":
        return dyn.StroockYorDynamics(p["family"], p["dt"])
    if name == "brownian":
        d = dyn.BrownianDynamics()
        d.dt = p["dt"]
        return d
    if name == "linear":
        d = dyn.LinearDynamics()
        d.dt = p["dt"]
        return d
    if name == "nse":
        lat, noise, params = _nse_setup(p)
        return dyn.NSEDynamics(params, nse.CutoffSpec(p["R"]), noise)
    raise ConfigError(f"unknown dynamics {name!r}")


def _nse_phi(p: dict, lat):
    modes = [nse.ModeRef((1, 0, 0)), nse.ModeRef((0, 1, 1), 1, "sin")]
    prof = nse.CYLINDER_PROFILES[p["phi"]]
    return nse.CylinderFunction(prof, tuple(modes[:prof.arity]), lat)


def _nse_x(p: dict, lat, seed: int):
    if p["x"] == 0:
        return nse.SpectralField.zeros(lat)
    gen = RandomSource(seed).child(10**6).generator()
    return nse.SpectralField.random(lat, gen, p["x"], 1.0)


def _observable(p: dict, d, seed: int):
    if p["dynamics"] == "nse":
        return _nse_phi(p, d.stepper.lat), _nse_x(p, d.stepper.lat, seed)
    return p["phi"], p["x"]


def run_resolvent_identity(p: dict, seed: int) -> Outcome:
    out = Outcome()
    d = build_dynamics(p, seed)
    phi, x = _observable(p, d, seed)
    r = semigroup.resolvent_identity_residual(d, x, phi, p["lambda1"], p["lambda2"], p["nodes"],
                                              p["ensemble"], RandomSource(seed), p["tol"])
    row = {"dynamics": p["dynamics"], "x": _jsonable(p["x"]), "phi": p["phi"], **r.to_dict()}
    out.rows.append(row)
    if d.exact_at(x):
        out.check("identity_residual", r.residual < p["exact_tol"], "residual", r.residual, p["exact_tol"])
    else:
        out.check("identity_residual", r.within(3.0), "residual", r.residual, 3 * r.combined_error)
    return out


def run_generator_check(p: dict, seed: int) -> Outcome:
    out = Outcome()
    d = build_dynamics(p, seed)
    phi, x = _observable(p, d, seed)
    g = semigroup.generator_fd(d, x, phi, p["eps"], p["ensemble"], RandomSource(seed))
    if p["dynamics"] == "nse":
        ref = d.formal_generator(phi, x)
    elif hasattr(d, "generator"):
        ref = float(d.generator(dyn.get_observable(p["phi"]))(np.array([float(x)]))[0])
    else:
        ref = None
    row = {"dynamics": p["dynamics"], "x": _jsonable(p["x"]), "phi": p["phi"], **g.to_dict(),
           "generator": ref}
    out.rows.append(row)
    out.check("conclusive", g.conclusive, "3*std_error/|value|",
              3 * g.std_error / abs(g.value) if g.value else float("inf"), 1.0)
    if ref is not None:
        # deterministic runs keep an O(eps^2) remainder after extrapolation
        err = 3 * g.std_error if not g.exact else p["exact_tol"]
        out.check("matches_generator", abs(g.value - ref) <= err, "abs(fd - generator)",
                  abs(g.value - ref), err)
    return out


def run_mp_residual(p: dict, seed: int) -> Outcome:
    out = Outcome()
    d = build_dynamics(p, seed)
    if p["dynamics"] == "nse":
        raise ConfigError("mp-residual needs scalar dynamics")
    ob = dyn.get_observable(p["phi"])
    if p["table"] == "generator":
        L = d.generator(ob)
    elif p["table"] == "absorbing":
        gen = d.generator(ob)
        L = lambda xs: np.where(np.asarray(xs) == 0.0, 0.0, gen(xs))
    else:
        raise ConfigError(f"unknown generator table {p['table']!r}")
    pairs = list(zip(p["s"], p["t"]))
    rep = semigroup.martingale_problem_residual(d, p["x"], ob, L, pairs, p["ensemble"], RandomSource(seed))
    out.rows.append({"dynamics": p["dynamics"], "x": p["x"], "phi": p["phi"], "table": p["table"],
                     **rep.to_dict()})
    if p["expect"] == "martingale":
        out.check("martingale", rep.passes(p["z"]), "max_abs_z", rep.max_abs_z, p["z"])
    else:
        out.check("mismatch_detected", rep.max_abs_z > p["z"], "max_abs_z", rep.max_abs_z, p["z"])
    return out


# ---------------------------------------------------------------------------
# registry

_ALPHA = Param("float", 0.25, in_open(0.0, 0.5), "coefficient exponent")
_SUB = Param("int", girsanov.DEFAULT_SUBSTEPS, positive, "fine clock steps per grid step")

_SEMIGROUP_COMMON = {
    "dynamics": Param("str", "peano", one_of("peano", "girsanov", "stroockyor", "brownian", "linear", "nse")),
    "x": Param("float", 0.5, None, "starting point (nse: amplitude of a fixed random field)"),
    "phi": Param("str", "x", None, "registered observable (nse: cylinder profile)"),
    "ensemble": Param("int", 1000, positive),
    "dt": Param("float", 1e-2, positive, "simulation step (stochastic dynamics)"),
    "delay": Param("str", "exponential(1)", lambda v: _laws([v]), "peano delay law"),
    "alpha": _ALPHA,
    "selection": Param("str", "no_delay", one_of("no_delay", "delayed", "absorbed")),
    "rate": Param("float", 1.0, positive, "clock rate of the delayed selection"),
    "family": Param("str", "wiener", one_of(*stroockyor.FAMILIES)),
    "N": Param("int", 2, positive),
    "nu": Param("float", 1.0, positive),
    "alpha0": Param("float", 0.25, lambda v: None if v > 1 / 6 else "must exceed 1/6"),
    "noise_scale": Param("float", 1.0, nonneg),
    "R": Param("float", math.inf, positive),
    "horizon": Param("float", 1.0, positive),
}

REGISTRY: dict[str, Experiment] = {}


def _register(e: Experiment) -> None:
    REGISTRY[e.name] = e


_register(Experiment(
    "peano-markov", "peano", "Markov defect of the delay-law selections from 0",
    {"nu": Param("strs", ["exponential(0.5)", "exponential(1)", "exponential(2)"], _laws),
     "s": Param("floats", [0.25, 0.5, 1.0, 2.0], positive),
     "t": Param("floats", [0.25, 0.5, 1.0, 2.0], positive),
     "f": Param("strs", ["x", "x2", "cos"], one_of(*peano.FUNCTIONS)),
     "tol": Param("float", 1e-8, positive)},
    run_peano_markov))
_register(Experiment(
    "peano-extremal", "peano", "J(P^a) - J(P^b) against the two-extreme-point formula",
    {"lambda": Param("floats", [0.5, 1.0, 2.0], positive),
     "f": Param("strs", ["x", "x2"], one_of(*peano.FUNCTIONS)),
     "a": Param("floats", [0.0, 0.5, 1.0, 2.0, math.inf], nonneg),
     "b": Param("floats", [0.0, 0.5, 1.0, 2.0, math.inf], nonneg),
     "tol": Param("float", 1e-8, positive)},
    run_peano_extremal))
_register(Experiment(
    "girsanov-qv", "girsanov", "Quadratic variation and occupation of 0 for the no-delay solution",
    {"alpha": _ALPHA, "x0": Param("float", 1.0), "dt": Param("float", 1e-4, positive),
     "horizon": Param("float", 1.0, positive), "ensemble": Param("int", 1000, positive),
     "tol": Param("float", 0.05, positive), "eps": Param("float", 0.01, positive), "substeps": _SUB},
    run_girsanov_qv))
_register(Experiment(
    "girsanov-delay-markov", "girsanov", "Chapman-Kolmogorov check of the delayed solution",
    {"alpha": _ALPHA, "rate": Param("float", 1.0, positive), "s": Param("float", 0.5, positive),
     "t": Param("float", 0.5, positive), "dt": Param("float", 1e-3, positive),
     "ensemble": Param("int", 10_000, positive), "tol": Param("float", 0.05, positive),
     "compare_rates": Param("floats", [1.0, 10.0], positive),
     "compare_ensemble": Param("int", 2000, positive), "substeps": _SUB},
    run_girsanov_delay_markov))
_register(Experiment(
    "girsanov-invariant", "girsanov", "Atom at 0 of the damped absorbed and no-delay selections",
    {"alpha": _ALPHA, "x0": Param("float", 1.0), "burn_in": Param("float", 0.0, nonneg),
     "horizon": Param("float", 20.0, positive), "dt": Param("float", 1e-2, positive),
     "ensemble": Param("int", 200, positive)},
    run_girsanov_invariant))
_register(Experiment(
    "sy-strongfeller", "stroockyor", "Total-variation modulus of the transition kernels",
    {"families": Param("strs", ["wiener", "sticky", "reflected"], one_of(*stroockyor.FAMILIES)),
     "t": Param("float", 1.0, positive), "x": Param("float", 1.0, nonneg),
     "xprime": Param("floats", [1.01, 1.1, 1.5, 2.0], nonneg),
     "closed_form_tol": Param("float", 1e-6, positive), "min_family_tv": Param("float", 0.1, nonneg)},
    run_sy_strongfeller))
_register(Experiment(
    "sy-submartingale", "stroockyor", "One-sided submartingale suite on simulated families",
    {"families": Param("strs", ["wiener", "sticky"], one_of(*stroockyor.FAMILIES)),
     "controls": Param("strs", [], one_of(*stroockyor.FAMILIES),
                       "families that must be rejected by some test function"),
     "x": Param("float", 1.0, nonneg), "dt": Param("float", 1e-2, positive),
     "horizon": Param("float", 1.0, positive), "ensemble": Param("int", 4000, positive),
     "z": Param("float", 3.0, positive), "substeps": Param("int", stroockyor.DEFAULT_SUBSTEPS, positive)},
    run_sy_submartingale))
_register(Experiment(
    "nse-martingale", "nse", "Martingale and energy functionals of the cut-off Galerkin system",
    {"N": Param("int", 2, positive), "nu": Param("float", 1.0, positive),
     "alpha0": Param("float", 0.25, lambda v: None if v > 1 / 6 else "must exceed 1/6"),
     "noise_scale": Param("float", 1.0, nonneg), "R": Param("float", 100.0, positive),
     "dt": Param("float", 1e-3, positive), "horizon": Param("float", 0.5, positive),
     "ensemble": Param("int", 2000, positive), "mode": Param("floats", [1.0, 0.0, 0.0]),
     "u0_scale": Param("float", 0.5, nonneg), "z": Param("float", 3.0, positive),
     "qv_tol": Param("float", 0.05, positive)},
    run_nse_martingale))
_register(Experiment(
    "resolvent-identity", "semigroup", "R_l1 - R_l2 = (l2 - l1) R_l1 R_l2 at one point",
    {**_SEMIGROUP_COMMON, "lambda1": Param("float", 1.0, positive), "lambda2": Param("float", 2.0, positive),
     "nodes": Param("int", 32, positive), "tol": Param("float", 1e-10, positive),
     "exact_tol": Param("float", 1e-8, positive)},
    run_resolvent_identity))
_register(Experiment(
    "generator-check", "semigroup", "Richardson finite-difference generator against the closed form",
    {**_SEMIGROUP_COMMON, "eps": Param("floats", [1e-2, 1e-3], positive),
     "exact_tol": Param("float", 1e-6, positive)},
    run_generator_check))
_register(Experiment(
    "mp-residual", "semigroup", "Martingale-problem residual of phi against a generator table",
    {**_SEMIGROUP_COMMON, "table": Param("str", "generator", one_of("generator", "absorbing")),
     "expect": Param("str", "martingale", one_of("martingale", "mismatch")),
     "s": Param("floats", [0.25, 0.5], nonneg), "t": Param("floats", [0.5, 1.0], positive),
     "z": Param("float", 3.0, positive)},
    run_mp_residual))
