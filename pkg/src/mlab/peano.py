"""The non-unique ODE ``X' = -X + sqrt(X)`` on [0, 1] and its selections.

For ``x > 0`` the solution is unique; from 0 a solution may wait at the
origin for an arbitrary time before following the positive branch. A
selection is therefore labelled by the law of the departure delay.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss

from .pathcore import RandomSource, SamplePath, TimeGrid


class PeanoError(ValueError):
    pass


class QuadratureNotConverged(PeanoError):
    def __init__(self, message: str, estimate: float, discrepancy: float):
        super().__init__(message)
        self.estimate = estimate
        self.discrepancy = discrepancy


# ---------------------------------------------------------------------------
# closed-form flows


def _check_state(x):
    if not np.all((np.asarray(x) >= 0) & (np.asarray(x) <= 1)):
        raise PeanoError(f"state must lie in [0, 1], got {x}")


def flow_exact(x, t):
    """Solution from ``x`` at time ``t``; the branch from 0 never departs."""
    _check_state(x)
    if np.any(np.asarray(t) < 0):
        raise PeanoError("time must be nonnegative")
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    # y = sqrt(X) solves y' = (1 - y)/2
    y = 1.0 + (np.sqrt(x) - 1.0) * np.exp(-0.5 * t)
    out = np.where(x > 0, y * y, 0.0)
    return float(out) if out.ndim == 0 else out


def star_solution(t):
    """The solution leaving 0 at time 0 and positive afterwards."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise PeanoError("time must be nonnegative")
    out = np.expm1(-0.5 * t) ** 2
    return float(out) if out.ndim == 0 else out


def vector_field(x):
    return -x + np.sqrt(x)


def rk4_flow(x: float, t: float, dt: float = 1e-5) -> float:
    """Classical RK4 integration of the vector field; a test oracle only."""
    n = max(1, int(math.ceil(t / dt)))
    h = t / n
    f = lambda v: -v + math.sqrt(max(v, 0.0))
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return x


# ---------------------------------------------------------------------------
# registered observables

@dataclass(frozen=True)
class BoundedFunction:
    name: str
    fn: Callable
    sup_norm: float  # over [0, 1]

    def __call__(self, x):
        return self.fn(x)


FUNCTIONS: dict[str, BoundedFunction] = {
    f.name: f
    for f in [
        BoundedFunction("one", lambda x: np.ones_like(np.asarray(x, dtype=float)), 1.0),
        BoundedFunction("x", lambda x: np.asarray(x, dtype=float), 1.0),
        BoundedFunction("x2", lambda x: np.asarray(x, dtype=float) ** 2, 1.0),
        BoundedFunction("cos", lambda x: np.cos(x), 1.0),
        BoundedFunction("one_minus_x", lambda x: 1.0 - np.asarray(x, dtype=float), 1.0),
    ]
}


def get_function(f) -> BoundedFunction:
    if isinstance(f, BoundedFunction):
        return f
    try:
        return FUNCTIONS[f]
    except KeyError:
        raise PeanoError(f"unregistered function {f!r}; known: {sorted(FUNCTIONS)}") from None


# ---------------------------------------------------------------------------
# delay laws on [0, inf]

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = leggauss(n)
    return _GL_CACHE[n]


def gauss_legendre(g: Callable, lo: float, hi: float, n: int = 64, panels: int = 1) -> float:
    """Composite Gauss-Legendre rule for a vectorized integrand on [lo, hi]."""
    if hi <= lo:
        return 0.0
    x, w = _gauss(n)
    edges = np.linspace(lo, hi, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    return float(np.sum(0.5 * (b - a) * w[None, :] * g(nodes)))


@dataclass(frozen=True)
class DelayLaw:
    """Law of the departure time from 0.

    ``kind`` is one of ``exponential``, ``dirac``, ``uniform``, ``empirical``.
    An atom at infinity is represented by ``at_infinity=True`` on a dirac law;
    exponential(0) and exponential(inf) are normalized to diracs.
    """

    kind: str
    rate: float | None = None
    at: float | None = None
    lo: float | None = None
    hi: float | None = None
    samples: tuple | None = None
    at_infinity: bool = False

    @staticmethod
    def exponential(rate: float) -> "DelayLaw":
        if rate < 0 or math.isnan(rate):
            raise PeanoError(f"rate must lie in [0, inf], got {rate}")
        if rate == 0:
            return DelayLaw.never()
        if math.isinf(rate):
            return DelayLaw.dirac(0.0)
        return DelayLaw("exponential", rate=float(rate))

    @staticmethod
    def dirac(a: float) -> "DelayLaw":
        if a < 0 or math.isnan(a):
            raise PeanoError(f"dirac location must lie in [0, inf], got {a}")
        if math.isinf(a):
            return DelayLaw.never()
        return DelayLaw("dirac", at=float(a))

    @staticmethod
    def never() -> "DelayLaw":
        return DelayLaw("dirac", at=None, at_infinity=True)

    @staticmethod
    def uniform(lo: float, hi: float) -> "DelayLaw":
        if not (0 <= lo < hi < math.inf):
            raise PeanoError(f"uniform law needs 0 <= lo < hi < inf, got ({lo}, {hi})")
        return DelayLaw("uniform", lo=float(lo), hi=float(hi))

    @staticmethod
    def empirical(samples) -> "DelayLaw":
        s = tuple(float(v) for v in samples)
        if not s or any(v < 0 or math.isnan(v) for v in s):
            raise PeanoError("empirical delay samples must be nonnegative")
        return DelayLaw("empirical", samples=s)

    @staticmethod
    def parse(text: str) -> "DelayLaw":
        """``exponential(1)``, ``dirac(0.5)``, ``dirac(inf)``, ``uniform(0,2)``."""
        text = text.strip().replace(" ", "")
        name, _, rest = text.partition("(")
        args = [float(a) for a in rest.rstrip(")").split(",") if a]
        ctor = {"exponential": DelayLaw.exponential, "exp": DelayLaw.exponential,
                "dirac": DelayLaw.dirac, "uniform": DelayLaw.uniform}.get(name)
        if ctor is None:
            raise PeanoError(f"unknown delay law {text!r}")
        return ctor(*args)

    def label(self) -> str:
        if self.kind == "exponential":
            return f"exponential({self.rate:g})"
        if self.kind == "dirac":
            return "dirac(inf)" if self.at_infinity else f"dirac({self.at:g})"
        if self.kind == "uniform":
            return f"uniform({self.lo:g},{self.hi:g})"
        return f"empirical(n={len(self.samples)})"

    @property
    def is_exponential(self) -> bool:
        return self.kind == "exponential" or (
            self.kind == "dirac" and (self.at_infinity or self.at == 0.0)
        )

    def survival(self, r: float) -> float:
        """``nu([r, inf])``."""
        if r <= 0:
            return 1.0
        if self.kind == "exponential":
            return math.exp(-self.rate * r)
        if self.kind == "dirac":
            return 1.0 if self.at_infinity or self.at >= r else 0.0
        if self.kind == "uniform":
            return min(1.0, max(0.0, (self.hi - r) / (self.hi - self.lo)))
        return float(np.mean(np.asarray(self.samples) >= r))

    def integrate(self, g: Callable, lo: float, hi: float, n: int = 64) -> float:
        """``int_[lo, hi) g(a) nu(da)`` for finite ``hi``; ``g`` vectorized."""
        if hi <= lo:
            return 0.0
        if self.kind == "dirac":
            if self.at_infinity or not (lo <= self.at < hi):
                return 0.0
            return float(g(np.array([self.at]))[0])
        if self.kind == "empirical":
            s = np.asarray(self.samples)
            s = s[(s >= lo) & (s < hi)]
            return float(np.sum(g(s)) / len(self.samples)) if s.size else 0.0
        if self.kind == "uniform":
            a, b = max(lo, self.lo), min(hi, self.hi)
            if b <= a:
                return 0.0
            return gauss_legendre(g, a, b, n) / (self.hi - self.lo)
        rate = self.rate
        # split so each panel spans a bounded number of e-folds
        panels = max(1, int(math.ceil(rate * (hi - lo) / 8.0)))
        return gauss_legendre(lambda a: g(a) * rate * np.exp(-rate * a), lo, hi, n, panels)

    def expect(self, g: Callable, cut: float, tail_value: float, n: int = 64) -> float:
        """``E[g(a)]`` when ``g`` is constant (``tail_value``) on ``[cut, inf]``."""
        return self.integrate(g, 0.0, cut, n) + self.survival(cut) * tail_value

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "exponential":
            return float(rng.exponential(1.0 / self.rate))
        if self.kind == "dirac":
            return math.inf if self.at_infinity else self.at
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        return float(self.samples[rng.integers(len(self.samples))])


@dataclass(frozen=True)
class SelectionFamily:
    delay: DelayLaw


# ---------------------------------------------------------------------------
# sampling


def selection_path_values(delay_time: float, x: float, times: np.ndarray) -> np.ndarray:
    if x > 0:
        return flow_exact(x, times)
    if math.isinf(delay_time):
        return np.zeros_like(times)
    return star_solution(np.maximum(times - delay_time, 0.0))


def selection_sample(family: SelectionFamily, x: float, grid: TimeGrid,
                     rng: RandomSource) -> SamplePath:
    """One path of the selection started at ``x``."""
    _check_state(x)
    a = 0.0 if x > 0 else family.delay.sample(rng.generator())
    return SamplePath(grid, selection_path_values(a, x, grid.times))


# ---------------------------------------------------------------------------
# Markov defect and the resolvent functional


def _check_converged(compute: Callable[[int], float], n: int, tol: float, what: str) -> float:
    coarse, fine = compute(n), compute(2 * n)
    if abs(fine - coarse) > tol:
        raise QuadratureNotConverged(
            f"{what}: quadrature did not converge (|Q_2n - Q_n| = {abs(fine - coarse):.3e})",
            fine, abs(fine - coarse),
        )
    return fine


def markov_defect(family: SelectionFamily, s: float, t: float, f, n: int = 48,
                  tol: float = 1e-11) -> float:
    """``E[f(xi_{s+t})] - E[E^{xi_s}[f(xi_t)]]`` under the selection started at 0.

    Both sides are evaluated by deterministic quadrature over the delay law;
    the restart from ``xi_s > 0`` goes through ``flow_exact``.
    """
    if s <= 0 or t <= 0:
        raise PeanoError("s and t must be positive")
    f = get_function(f)
    nu = family.delay
    f0 = float(f(0.0))

    def compute(m: int) -> float:
        lhs = nu.expect(lambda a: f(star_solution(s + t - a)), s + t, f0, m)
        restart_positive = nu.integrate(
            lambda a: f(flow_exact(star_solution(s - a), t)), 0.0, s, m
        )
        from_zero = nu.expect(lambda b: f(star_solution(t - b)), t, f0, m)
        return lhs - (restart_positive + nu.survival(s) * from_zero)

    return _check_converged(compute, n, tol, "markov_defect")


def _tail_horizon(lam: float, sup_norm: float, tol: float = 1e-13) -> float:
    if sup_norm == 0:
        return 1.0
    return max(1.0, math.log(sup_norm / (lam * tol)) / lam)


def laplace_of_star(lam: float, f, n: int = 48) -> float:
    """``int_0^inf e^{-lam s} f(X*(s)) ds``; the dropped tail is below 1e-13."""
    f = get_function(f)
    T = _tail_horizon(lam, f.sup_norm)
    panels = max(1, int(math.ceil(lam * T / 4.0)))
    return gauss_legendre(lambda u: np.exp(-lam * u) * f(star_solution(u)), 0.0, T, n, panels)


def j_functional(lam: float, f, delay: DelayLaw, n: int = 48) -> float:
    """``E[int_0^inf e^{-lam t} f(xi_t) dt]`` for the selection from 0 with ``delay``."""
    if lam <= 0:
        raise PeanoError("lambda must be positive")
    f = get_function(f)
    f0 = float(f(0.0))
    K = laplace_of_star(lam, f, n)

    def g(a):
        e = np.exp(-lam * a)
        return f0 * (1.0 - e) / lam + e * K

    if delay.kind == "dirac" and delay.at_infinity:
        return f0 / lam
    if delay.kind == "exponential":
        # beyond T_nu the delay mass is below 1e-16; its value there is ~ g(inf)
        T_nu = 37.0 / delay.rate
        return delay.expect(g, T_nu, f0 / lam, n)
    if delay.kind == "dirac":
        hi = delay.at + 1.0
    elif delay.kind == "uniform":
        hi = delay.hi
    else:
        hi = max(delay.samples) + 1.0
    return delay.expect(g, hi, f0 / lam, n)


@dataclass(frozen=True)
class ExtremalityGap:
    lam: float
    f: str
    a: float
    b: float
    gap: float
    formula_gap: float

    @property
    def abs_err(self) -> float:
        return abs(self.gap - self.formula_gap)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "f": self.f, "a": self.a, "b": self.b,
                "gap": self.gap, "formula_gap": self.formula_gap, "abs_err": self.abs_err}


def _rate_factor(lam: float, a: float, b: float) -> float:
    """``lam (b - a) / ((lam + a)(lam + b))`` with the limits at infinite rates."""
    if a == b:
        return 0.0
    if math.isinf(a) and math.isinf(b):
        return 0.0
    if math.isinf(a):
        return -lam / (lam + b)
    if math.isinf(b):
        return lam / (lam + a)
    return lam * (b - a) / ((lam + a) * (lam + b))


def extremality_gap(lam: float, f, a: float, b: float) -> ExtremalityGap:
    """``J(P^a) - J(P^b)`` from 0 against the two-extreme-point formula."""
    f = get_function(f)
    ja = j_functional(lam, f, DelayLaw.exponential(a))
    jb = j_functional(lam, f, DelayLaw.exponential(b))
    j_never = j_functional(lam, f, DelayLaw.exponential(0.0))
    j_instant = j_functional(lam, f, DelayLaw.exponential(math.inf))
    formula = _rate_factor(lam, a, b) * (j_never - j_instant)
    return ExtremalityGap(lam, f.name, a, b, ja - jb, formula)


def mass_near_equilibrium(delay: DelayLaw, t: float, eps: float = 1e-3) -> float:
    """``P(xi_t in [1 - eps, 1])`` for the selection from 0, computed exactly."""
    # X*(r) >= 1 - eps  iff  r >= r_eps
    r_eps = -2.0 * math.log(1.0 - math.sqrt(1.0 - eps))
    if t < r_eps:
        return 0.0
    return 1.0 - delay.survival(math.nextafter(t - r_eps, math.inf))
