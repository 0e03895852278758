"""Transition semigroup, resolvent and generator estimators.

Every estimator draws one ensemble and evaluates it at all the times it
needs (shared trajectories). Dynamics with an exact expectation skip the
sampling and carry zero Monte-Carlo error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dynamics import Dynamics, Observable, get_observable, interpolate_nodes
from .pathcore import (MartingaleReport, PathError, RandomSource, TimeGrid, affine_predictors,
                       martingale_increment_test, trapezoid_cumulative)

MIN_ENSEMBLE = 100
ABORT_FRACTION = 1e-3


class SemigroupError(ValueError):
    pass


class HorizonTooShort(SemigroupError):
    pass


class EstimateRefused(SemigroupError):
    pass


class InconclusiveEstimate(SemigroupError):
    pass


def _rng(rng) -> RandomSource:
    if rng is None:
        return RandomSource(0)
    return rng if isinstance(rng, RandomSource) else RandomSource(int(rng))


def _x_label(x):
    if hasattr(x, "lat"):
        return "field"
    return float(x)


def _phi_label(phi) -> str:
    if isinstance(phi, str):
        return phi
    return getattr(phi, "name", None) or getattr(getattr(phi, "profile", None), "name", repr(phi))


def _drop_aborted(vals: np.ndarray) -> tuple[np.ndarray, int]:
    """Exclude rows with a non-finite value if they are under 0.1% of the ensemble."""
    bad = ~np.all(np.isfinite(vals), axis=1)
    nbad = int(bad.sum())
    if nbad == 0:
        return vals, 0
    if nbad >= ABORT_FRACTION * vals.shape[0]:
        raise EstimateRefused(f"{nbad} of {vals.shape[0]} trajectories aborted; estimate refused")
    return vals[~bad], nbad


def _values(dyn: Dynamics, x, phi, times, n_paths: int, rng) -> tuple[np.ndarray, bool, int]:
    """``(rows, exact, aborted)``; exact rows are a single expectation row."""
    times = np.asarray(times, dtype=float)
    if dyn.exact_at(x):
        return np.asarray(dyn.expectation(x, phi, times), dtype=float)[None, :], True, 0
    if n_paths < MIN_ENSEMBLE:
        raise SemigroupError(f"ensemble of {n_paths} is below the minimum {MIN_ENSEMBLE}")
    vals, nbad = _drop_aborted(dyn.sample(x, phi, times, n_paths, _rng(rng)))
    return vals, False, nbad


def _mean_se(per_path: np.ndarray, exact: bool) -> tuple[float, float]:
    if exact:
        return float(per_path[0]), 0.0
    return float(per_path.mean()), float(per_path.std(ddof=1) / math.sqrt(per_path.size))


# ---------------------------------------------------------------------------
# P_t


@dataclass(frozen=True)
class SemigroupEstimate:
    t: float
    x: object
    phi: str
    value: float
    std_error: float
    n: int
    exact: bool = False
    aborted: int = 0

    def __post_init__(self):
        if not self.exact and self.n < MIN_ENSEMBLE:
            raise SemigroupError(f"n = {self.n} is below {MIN_ENSEMBLE}")

    def to_dict(self) -> dict:
        return {"t": self.t, "x": _x_label(self.x), "phi": self.phi, "value": self.value,
                "std_error": self.std_error, "n": self.n, "exact": self.exact,
                "aborted": self.aborted}


def estimate_Pt(dyn: Dynamics, x, phi, t: float, n_paths: int = 1000, rng=None) -> SemigroupEstimate:
    """``E_x[phi(xi_t)]`` with its standard error."""
    if t < 0:
        raise SemigroupError("t must be nonnegative")
    dyn.check_state(x)
    name = _phi_label(phi)
    if t == 0:
        return SemigroupEstimate(0.0, x, name, dyn.phi_at(phi, x), 0.0, 0, exact=True)
    vals, exact, nbad = _values(dyn, x, phi, [t], n_paths, rng)
    m, se = _mean_se(vals[:, 0], exact)
    return SemigroupEstimate(float(t), x, name, m, se, 0 if exact else vals.shape[0], exact, nbad)


def semigroup_curve(dyn: Dynamics, x, phi, times, n_paths: int = 1000, rng=None):
    """``(mean, se)`` of ``P_t phi(x)`` at every time, from one ensemble."""
    vals, exact, _ = _values(dyn, x, phi, times, n_paths, rng)
    if exact:
        return vals[0], np.zeros(vals.shape[1])
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(vals.shape[0])


# ---------------------------------------------------------------------------
# quadrature rules


@dataclass(frozen=True)
class Rule:
    nodes: np.ndarray
    weights: np.ndarray


def gauss_rule(lo: float, hi: float, n: int, panels: int = 1) -> Rule:
    x, w = leggauss(n)
    edges = np.linspace(lo, hi, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w[None, :]).ravel()
    return Rule(nodes, weights)


def tail_horizon(lam: float, bound: float, tol: float) -> float:
    if bound == 0:
        return 1.0
    return max(1.0, math.log(bound / (lam * tol)) / lam)


def _panels(lam: float, horizon: float, per_panel: float) -> int:
    return max(1, int(math.ceil(lam * horizon / per_panel)))


@dataclass
class _Laplace:
    """A weighted rule for ``int kernel(t) P_t phi dt`` plus its half-order twin."""

    fine: Rule
    coarse: Rule
    tail: float
    horizon: float

    def all_nodes(self) -> np.ndarray:
        return np.concatenate([self.fine.nodes, self.coarse.nodes])

    def apply(self, vals: np.ndarray, offset: int) -> tuple[np.ndarray, np.ndarray]:
        nf = self.fine.nodes.size
        fine = vals[:, offset:offset + nf] @ self.fine.weights
        coarse = vals[:, offset + nf:offset + nf + self.coarse.nodes.size] @ self.coarse.weights
        return fine, coarse

    @property
    def size(self) -> int:
        return self.fine.nodes.size + self.coarse.nodes.size


def _laplace(kernel, lam: float, bound: float, tol: float, n_nodes: int, horizon: float | None,
             tail: float | None = None, per_panel: float = 2.0) -> _Laplace:
    H = tail_horizon(lam, bound, tol) if horizon is None else float(horizon)
    tail_bound = bound * math.exp(-lam * H) / lam if tail is None else tail
    if tail_bound > tol * (1 + 1e-9):
        raise HorizonTooShort(f"tail bound {tail_bound:.3e} at horizon {H:g} exceeds {tol:.1e}")
    panels = _panels(lam, H, per_panel)
    fine = gauss_rule(0.0, H, n_nodes, panels)
    coarse = gauss_rule(0.0, H, max(2, n_nodes // 2), panels)
    fine = Rule(fine.nodes, fine.weights * kernel(fine.nodes))
    coarse = Rule(coarse.nodes, coarse.weights * kernel(coarse.nodes))
    return _Laplace(fine, coarse, tail_bound, H)


def _bound(dyn: Dynamics, phi) -> float:
    b = dyn.sup_norm(phi)
    if b is None:
        raise SemigroupError(f"{_phi_label(phi)} is unbounded; the resolvent tail bound needs a bounded observable")
    return float(b)


# ---------------------------------------------------------------------------
# resolvent


@dataclass(frozen=True)
class ResolventEstimate:
    lam: float
    value: float
    quadrature_error: float
    mc_error: float
    horizon: float
    tail_bound: float
    n: int
    exact: bool = False

    @property
    def combined_error(self) -> float:
        return self.quadrature_error + self.mc_error

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "value": self.value, "quadrature_error": self.quadrature_error,
                "mc_error": self.mc_error, "tail_bound": self.tail_bound, "horizon": self.horizon,
                "n": self.n, "exact": self.exact}


def resolvent(dyn: Dynamics, x, phi, lam: float, n_nodes: int = 32, n_paths: int = 1000, rng=None,
              tol: float = 1e-10, horizon: float | None = None) -> ResolventEstimate:
    """``int_0^inf e^{-lam t} P_t phi(x) dt`` by composite Gauss-Legendre on ``[0, horizon]``.

    ``quadrature_error`` is the gap to the half-order rule plus the tail
    bound ``|phi|_inf e^{-lam horizon} / lam``.
    """
    if not lam > 0:
        raise SemigroupError("lambda must be positive")
    dyn.check_state(x)
    rule = _laplace(lambda t: np.exp(-lam * t), lam, _bound(dyn, phi), tol, n_nodes, horizon)
    vals, exact, _ = _values(dyn, x, phi, rule.all_nodes(), n_paths, rng)
    fine, coarse = rule.apply(vals, 0)
    m, se = _mean_se(fine, exact)
    quad = abs(m - float(np.mean(coarse))) + rule.tail
    return ResolventEstimate(float(lam), m, quad, se, rule.horizon, rule.tail,
                             0 if exact else vals.shape[0], exact)


def shifted_resolvent(dyn: Dynamics, x, phi, lam: float, t: float, n_nodes: int = 32,
                      n_paths: int = 1000, rng=None, tol: float = 1e-10) -> ResolventEstimate:
    """``int_0^inf e^{-lam s} P_{t+s} phi(x) ds``, which equals ``P_t R_lam phi(x)``."""
    bound = _bound(dyn, phi)
    rule = _laplace(lambda s: np.exp(-lam * s), lam, bound, tol, n_nodes, None)
    vals, exact, _ = _values(dyn, x, phi, t + rule.all_nodes(), n_paths, rng)
    fine, coarse = rule.apply(vals, 0)
    m, se = _mean_se(fine, exact)
    quad = abs(m - float(np.mean(coarse))) + rule.tail
    return ResolventEstimate(float(lam), m, quad, se, rule.horizon, rule.tail,
                             0 if exact else vals.shape[0], exact)


@dataclass(frozen=True)
class IdentityResidual:
    lam1: float
    lam2: float
    lhs: float
    rhs: float
    residual: float
    quadrature_error: float
    mc_error: float
    n: int
    degenerate: bool = False

    @property
    def combined_error(self) -> float:
        return self.quadrature_error + self.mc_error

    def within(self, factor: float = 3.0) -> bool:
        return self.residual <= factor * self.combined_error

    def to_dict(self) -> dict:
        return {"lambda1": self.lam1, "lambda2": self.lam2, "lhs": self.lhs, "rhs": self.rhs,
                "residual": self.residual, "quadrature_error": self.quadrature_error,
                "mc_error": self.mc_error, "combined_error": self.combined_error,
                "n": self.n, "degenerate": self.degenerate}


def resolvent_identity_residual(dyn: Dynamics, x, phi, lam1: float, lam2: float, n_nodes: int = 32,
                                n_paths: int = 1000, rng=None, tol: float = 1e-10,
                                fd_step: float = 0.01) -> IdentityResidual:
    """``|R_l1 phi - R_l2 phi - (l2 - l1) R_l1 R_l2 phi|`` at ``x``.

    The double resolvent is reduced to one integral against
    ``e^{-l2 r}(e^{(l2-l1) r} - 1)`` applied to ``P_r phi``, so no nested
    sampling is needed. The left side uses one rule per lambda; the right
    side its own rule on a common horizon; all nodes are read from one
    ensemble and the residual's error comes from its per-path spread.

    With ``lam1 == lam2`` the identity is divided by ``l2 - l1`` first:
    ``-d/dlam R_lam phi`` (a Richardson-extrapolated central difference
    with step ``fd_step``) is compared with the limit kernel ``r e^{-lam r}``.
    """
    if not (lam1 > 0 and lam2 > 0):
        raise SemigroupError("lambdas must be positive")
    dyn.check_state(x)
    bound = _bound(dyn, phi)
    if lam1 == lam2:
        return _degenerate_identity(dyn, x, phi, lam1, bound, n_nodes, n_paths, rng, tol, fd_step)
    lo = min(lam1, lam2)
    d = lam2 - lam1
    left1 = _laplace(lambda t: np.exp(-lam1 * t), lam1, bound, tol, n_nodes, None)
    left2 = _laplace(lambda t: np.exp(-lam2 * t), lam2, bound, tol, n_nodes, None)
    # the kernel integrates to |1/l1 - 1/l2| and is dominated by e^{-lo r}
    H = tail_horizon(lo, bound, tol)
    kern_tail = bound * abs(math.exp(-lam1 * H) / lam1 - math.exp(-lam2 * H) / lam2)
    right = _laplace(lambda r: np.exp(-lam2 * r) * np.expm1(d * r), lo, bound, tol,
                     n_nodes + 8, H, tail=kern_tail, per_panel=1.5)
    nodes = np.concatenate([left1.all_nodes(), left2.all_nodes(), right.all_nodes()])
    vals, exact, _ = _values(dyn, x, phi, nodes, n_paths, rng)
    f1, c1 = left1.apply(vals, 0)
    f2, c2 = left2.apply(vals, left1.size)
    fr, cr = right.apply(vals, left1.size + left2.size)
    lhs, rhs = f1 - f2, fr
    quad = (abs(np.mean(f1) - np.mean(c1)) + abs(np.mean(f2) - np.mean(c2)) + abs(np.mean(fr) - np.mean(cr))
            + left1.tail + left2.tail + right.tail)
    res_m, res_se = _mean_se(lhs - rhs, exact)
    return IdentityResidual(float(lam1), float(lam2), float(np.mean(lhs)), float(np.mean(rhs)),
                            abs(res_m), float(quad), res_se, 0 if exact else vals.shape[0])


def _degenerate_identity(dyn, x, phi, lam, bound, n_nodes, n_paths, rng, tol, h) -> IdentityResidual:
    if h >= lam:
        raise SemigroupError("fd_step must be below lambda")
    lams = [lam - 2 * h, lam - h, lam + h, lam + 2 * h]
    rules = [_laplace(lambda t, l=l: np.exp(-l * t), l, bound, tol, n_nodes, None) for l in lams]
    # r e^{-lam r} is dominated by e^{-lam r / 2} up to 2 / (e lam)
    H = tail_horizon(lam / 2, 2 * bound / (math.e * lam), tol)
    kern_tail = bound * math.exp(-lam * H) * (lam * H + 1) / lam ** 2
    right = _laplace(lambda r: r * np.exp(-lam * r), lam, bound, tol, n_nodes + 8, H,
                     tail=kern_tail, per_panel=1.5)
    nodes = np.concatenate([r.all_nodes() for r in rules] + [right.all_nodes()])
    vals, exact, _ = _values(dyn, x, phi, nodes, n_paths, rng)
    fines, quad, off = [], 0.0, 0
    for r in rules:
        f, c = r.apply(vals, off)
        off += r.size
        fines.append(f)
        quad += abs(np.mean(f) - np.mean(c)) + r.tail
    fr, cr = right.apply(vals, off)
    quad += abs(np.mean(fr) - np.mean(cr)) + right.tail
    # fourth-order central difference
    deriv = (fines[0] - 8 * fines[1] + 8 * fines[2] - fines[3]) / (12 * h)
    # the truncation term h^4 R^(5) / 30 with |R^(5)| <= 5! |phi| / lam^6
    quad = quad * 18 / (12 * h) + h ** 4 * 120 * bound / (30 * lam ** 6)
    lhs, rhs = -deriv, fr
    res_m, res_se = _mean_se(lhs - rhs, exact)
    return IdentityResidual(float(lam), float(lam), float(np.mean(lhs)), float(np.mean(rhs)),
                            abs(res_m), float(quad), res_se, 0 if exact else vals.shape[0], True)


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GeneratorEstimate:
    value: float
    std_error: float
    eps: tuple
    raw: tuple  # (D(eps), se) per eps
    n: int
    exact: bool = False

    @property
    def conclusive(self) -> bool:
        return 3.0 * self.std_error <= abs(self.value)

    @property
    def status(self) -> str:
        return "ok" if self.conclusive else "inconclusive"

    def require(self) -> float:
        if not self.conclusive:
            raise InconclusiveEstimate(
                f"error bar 3*{self.std_error:.3e} exceeds |estimate| {abs(self.value):.3e}")
        return self.value

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "status": self.status,
                "eps": list(self.eps), "fd": [list(r) for r in self.raw], "n": self.n,
                "exact": self.exact}


def richardson_weights(eps) -> np.ndarray:
    """Weights ``c`` with ``sum c_j D(eps_j)`` exact for ``D`` polynomial in eps
    of degree ``len(eps) - 1``, evaluated at 0."""
    e = np.asarray(eps, dtype=float)
    m = e.size
    V = np.vander(e, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[0] = 1.0
    return np.linalg.solve(V, rhs)


def generator_fd(dyn: Dynamics, x, phi, eps_list, n_paths: int = 10_000, rng=None) -> GeneratorEstimate:
    """Richardson-extrapolated ``(P_eps phi(x) - phi(x)) / eps``.

    All eps are read from one ensemble, so the differences share their noise.
    """
    eps = tuple(float(e) for e in eps_list)
    if not eps or any(e <= 0 for e in eps):
        raise SemigroupError("eps values must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise SemigroupError("eps values must be strictly decreasing")
    dyn.check_state(x)
    vals, exact, _ = _values(dyn, x, phi, np.array(eps), n_paths, rng)
    p0 = dyn.phi_at(phi, x)
    diffs = (vals - p0) / np.array(eps)[None, :]
    raw = tuple(_mean_se(diffs[:, j], exact) for j in range(len(eps)))
    per_path = diffs @ richardson_weights(eps)
    m, se = _mean_se(per_path, exact)
    return GeneratorEstimate(m, se, eps, raw, 0 if exact else vals.shape[0], exact)


# ---------------------------------------------------------------------------
# martingale problem


def _deterministic_report(M: np.ndarray, grid: TimeGrid, pairs, tol: float) -> MartingaleReport:
    coefs, zs = [], []
    for s, t in pairs:
        ks, kt = grid.index_of(s), grid.index_of(t)
        if not ks < kt:
            raise PathError(f"need s < t, got ({s}, {t})")
        inc = float(M[kt] - M[ks])
        coefs.append([inc])
        zs.append([0.0 if abs(inc) <= tol else math.copysign(math.inf, inc)])
    return MartingaleReport([(float(s), float(t)) for s, t in pairs], ["increment"],
                            np.array(coefs), np.zeros((len(pairs), 1)), np.array(zs), 1)


def martingale_problem_residual(dyn: Dynamics, x, phi, Lphi, pairs, n_paths: int = 2000, rng=None,
                                predictors=affine_predictors, predictor_names=None,
                                deterministic_tol: float = 1e-6) -> MartingaleReport:
    """Martingale test of ``phi(xi_t) - int_0^t Lphi(xi_s) ds``.

    ``Lphi`` maps states to the generator action. A deterministic start
    gives one path; its increments must vanish up to ``deterministic_tol``.
    """
    dyn.check_state(x)
    horizon = max(t for _, t in pairs)
    grid = dyn.grid_for(horizon)
    obs = get_observable(phi) if isinstance(phi, str) else phi
    if dyn.deterministic_at(x):
        path = dyn.paths(x, grid, 1, _rng(rng))
        M = dyn.evaluate(obs, path)[0] - trapezoid_cumulative(np.asarray(Lphi(path[0]), float), grid.dt)
        return _deterministic_report(M, grid, pairs, deterministic_tol)
    paths = dyn.paths(x, grid, n_paths, _rng(rng))
    M = dyn.evaluate(obs, paths) - trapezoid_cumulative(np.asarray(Lphi(paths), dtype=float), grid.dt)
    if predictor_names is None and predictors is affine_predictors:
        predictor_names = ["intercept", "x_s"]
    return martingale_increment_test(paths, M, grid, pairs, predictors, predictor_names)


def integral_identity_residual(dyn: Dynamics, x, phi, Lphi, t: float, n_nodes: int = 24,
                               n_paths: int = 1000, rng=None) -> tuple[float, float]:
    """``P_t phi(x) - phi(x) - int_0^t P_s(Lphi)(x) ds`` and its standard error.

    ``Lphi`` maps states to generator values; the time integral is a
    Gauss-Legendre rule on one ensemble.
    """
    dyn.check_state(x)
    rule = gauss_rule(0.0, t, n_nodes, max(1, int(math.ceil(t))))
    times = np.concatenate([[t], rule.nodes])
    obs = get_observable(phi) if isinstance(phi, str) else phi
    if dyn.exact_at(x):
        pt = float(dyn.expectation(x, obs, [t])[0])
        lvals = np.asarray(dyn.expectation(x, Observable("Lphi", Lphi), rule.nodes), dtype=float)
        return pt - dyn.phi_at(obs, x) - float(lvals @ rule.weights), 0.0
    if n_paths < MIN_ENSEMBLE:
        raise SemigroupError(f"ensemble of {n_paths} is below the minimum {MIN_ENSEMBLE}")
    grid = dyn.grid_for(t)
    states = dyn.paths(x, grid, n_paths, _rng(rng))
    pv = interpolate_nodes(dyn.evaluate(obs, states), grid, times[:1])[:, 0]
    lv = interpolate_nodes(np.asarray(Lphi(states), dtype=float), grid, rule.nodes) @ rule.weights
    per_path = pv - dyn.phi_at(obs, x) - lv
    return _mean_se(per_path, False)
