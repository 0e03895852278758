"""Dynamics handles shared by the semigroup estimators and the CLI.

A handle knows how to produce trajectories from a starting point. Scalar
handles return state arrays of shape ``(n_paths, n_nodes)``; the estimator
layer evaluates observables on them and only reduces. Row ``i`` of every
ensemble is driven by ``rng.child(i)``, so two calls with the same source
reuse the same noise (common random numbers).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import girsanov, nse, peano, stroockyor
from .pathcore import RandomSource, TimeGrid


class DynamicsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Scalar observable with optional derivatives.

    ``bound`` is the sup norm over the real line, or None when unbounded.
    """

    name: str
    fn: Callable
    bound: float | None = None
    d1: Callable | None = None
    d2: Callable | None = None

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


def _abs_ratio(x):
    a = np.abs(x)
    return a / (1.0 + a)


def _abs_ratio_d2(x):
    # away from the kink at 0
    return -2.0 / (1.0 + np.abs(x)) ** 3


OBSERVABLES: dict[str, Observable] = {
    o.name: o
    for o in [
        Observable("one", lambda x: np.ones_like(x), 1.0,
                   lambda x: np.zeros_like(x), lambda x: np.zeros_like(x)),
        Observable("x", lambda x: x, None, lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
        Observable("x2", lambda x: x * x, None, lambda x: 2 * x, lambda x: np.full_like(x, 2.0)),
        Observable("cos", np.cos, 1.0, lambda x: -np.sin(x), lambda x: -np.cos(x)),
        Observable("sin", np.sin, 1.0, np.cos, lambda x: -np.sin(x)),
        Observable("tanh", np.tanh, 1.0, lambda x: 1 - np.tanh(x) ** 2,
                   lambda x: -2 * np.tanh(x) * (1 - np.tanh(x) ** 2)),
        Observable("one_minus_x", lambda x: 1.0 - x, None,
                   lambda x: -np.ones_like(x), lambda x: np.zeros_like(x)),
        Observable("abs_ratio", _abs_ratio, 1.0,
                   lambda x: np.sign(x) / (1.0 + np.abs(x)) ** 2, _abs_ratio_d2),
    ]
}


def get_observable(phi) -> Observable:
    if isinstance(phi, Observable):
        return phi
    try:
        return OBSERVABLES[phi]
    except KeyError:
        raise DynamicsError(f"unregistered observable {phi!r}; known: {sorted(OBSERVABLES)}") from None


# ---------------------------------------------------------------------------
# handles


class Dynamics:
    """Base handle. Subclasses set ``name`` and ``dt`` and implement ``paths``."""

    name = "abstract"
    dt = 1e-2
    state_range: tuple[float, float] | None = None

    def check_state(self, x) -> None:
        pass

    def exact_at(self, x) -> bool:
        """True when ``expectation`` is available from ``x``."""
        return False

    def deterministic_at(self, x) -> bool:
        return False

    def expectation(self, x, phi, times) -> np.ndarray:
        raise DynamicsError(f"{self.name}: no exact expectation")

    def paths(self, x, grid: TimeGrid, n_paths: int, rng: RandomSource) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, phi, states: np.ndarray) -> np.ndarray:
        return np.asarray(get_observable(phi)(states), dtype=float)

    def phi_at(self, phi, x) -> float:
        return float(self.evaluate(phi, np.asarray([x], dtype=float))[0])

    def sup_norm(self, phi) -> float | None:
        obs = get_observable(phi)
        if obs.bound is not None:
            return obs.bound
        if self.state_range is not None:
            grid = np.linspace(*self.state_range, 4097)
            return float(np.max(np.abs(obs(grid))))
        return None

    def grid_for(self, horizon: float) -> TimeGrid:
        n = max(1, int(math.ceil(horizon / self.dt - 1e-9)))
        return TimeGrid(0.0, self.dt, n)

    def sample(self, x, phi, times, n_paths: int, rng: RandomSource) -> np.ndarray:
        """``phi(xi_t)`` at arbitrary ``times`` on one shared ensemble.

        Values between grid nodes are linear interpolations of the node
        values; in expectation this is linear interpolation of ``P_t phi``.
        """
        times = np.asarray(times, dtype=float)
        grid = self.grid_for(float(times.max()) if times.size else 0.0)
        vals = self.evaluate(phi, self.paths(x, grid, n_paths, rng))
        return interpolate_nodes(vals, grid, times)

    def describe(self) -> dict:
        return {"name": self.name, "dt": self.dt}


def interpolate_nodes(vals: np.ndarray, grid: TimeGrid, times: np.ndarray) -> np.ndarray:
    u = (np.asarray(times, dtype=float) - grid.t0) / grid.dt
    if np.any(u < -1e-9) or np.any(u > grid.n_steps + 1e-9):
        raise DynamicsError("requested time outside the simulated grid")
    u = np.clip(u, 0.0, grid.n_steps)
    k = np.minimum(np.floor(u + 1e-9).astype(int), grid.n_steps - 1) if grid.n_steps else np.zeros(u.shape, int)
    frac = np.clip(u - k, 0.0, 1.0)
    frac[np.abs(frac) < 1e-9] = 0.0
    left = vals[:, k]
    right = vals[:, np.minimum(k + 1, grid.n_steps)]
    return left + frac[None, :] * (right - left)


class PeanoDynamics(Dynamics):
    """The selection with a given delay law; exact by quadrature over the law."""

    name = "peano"
    dt = 1e-4
    state_range = (0.0, 1.0)

    def __init__(self, delay: peano.DelayLaw | str = "exponential(1)"):
        self.delay = delay if isinstance(delay, peano.DelayLaw) else peano.DelayLaw.parse(delay)

    def check_state(self, x) -> None:
        peano._check_state(x)

    def exact_at(self, x) -> bool:
        return True

    def deterministic_at(self, x) -> bool:
        return float(x) > 0 or (self.delay.kind == "dirac")

    def evaluate(self, phi, states):
        obs = peano.FUNCTIONS.get(phi) if isinstance(phi, str) else None
        if obs is not None:
            return np.asarray(obs(states), dtype=float)
        return super().evaluate(phi, states)

    def sup_norm(self, phi) -> float | None:
        if isinstance(phi, str) and phi in peano.FUNCTIONS:
            return peano.FUNCTIONS[phi].sup_norm
        return super().sup_norm(phi)

    def _from_zero(self, phi, t: float, n: int = 48) -> float:
        f0 = self.phi_at(phi, 0.0)
        g = lambda a: self.evaluate(phi, peano.star_solution(np.maximum(t - a, 0.0)))
        # panels of length at most 2 keep the rule exact to rounding
        edges = np.linspace(0.0, t, max(1, int(math.ceil(t / 2.0))) + 1)
        inside = sum(self.delay.integrate(g, lo, hi, n) for lo, hi in zip(edges[:-1], edges[1:]))
        return inside + self.delay.survival(t) * f0

    def expectation(self, x, phi, times) -> np.ndarray:
        self.check_state(x)
        times = np.asarray(times, dtype=float)
        if float(x) > 0:
            return self.evaluate(phi, peano.flow_exact(float(x), times))
        return np.array([self._from_zero(phi, float(t)) for t in times.ravel()]).reshape(times.shape)

    def paths(self, x, grid, n_paths, rng):
        self.check_state(x)
        out = np.empty((n_paths, grid.n_steps + 1))
        for i in range(n_paths):
            a = 0.0 if float(x) > 0 else self.delay.sample(rng.child(i).generator())
            out[i] = peano.selection_path_values(a, float(x), grid.times)
        return out

    def generator(self, phi: Observable) -> Callable:
        return lambda x: peano.vector_field(x) * phi.d1(x)

    def describe(self):
        return {"name": self.name, "delay": self.delay.label()}


class BrownianDynamics(Dynamics):
    """Standard Brownian motion; a test hook with generator ``phi''/2``."""

    name = "brownian"
    dt = 1e-3

    def paths(self, x, grid, n_paths, rng):
        out = np.empty((n_paths, grid.n_steps + 1))
        sd = math.sqrt(grid.dt)
        for i in range(n_paths):
            z = rng.child(i).generator().standard_normal(grid.n_steps)
            out[i, 0] = x
            out[i, 1:] = x + np.cumsum(sd * z)
        return out

    def generator(self, phi: Observable) -> Callable:
        return lambda x: 0.5 * phi.d2(x)


class LinearDynamics(Dynamics):
    """Ornstein-Uhlenbeck ``dX = -theta X dt + sigma dW``, sampled exactly."""

    name = "linear"
    dt = 1e-3

    def __init__(self, theta: float = 1.0, sigma: float = 1.0):
        self.theta, self.sigma = float(theta), float(sigma)

    def paths(self, x, grid, n_paths, rng):
        a = math.exp(-self.theta * grid.dt)
        sd = self.sigma * math.sqrt(-math.expm1(-2 * self.theta * grid.dt) / (2 * self.theta))
        out = np.empty((n_paths, grid.n_steps + 1))
        for i in range(n_paths):
            z = rng.child(i).generator().standard_normal(grid.n_steps)
            v = float(x)
            out[i, 0] = v
            for k in range(grid.n_steps):
                v = a * v + sd * z[k]
                out[i, k + 1] = v
        return out

    def generator(self, phi: Observable) -> Callable:
        th, s2 = self.theta, self.sigma ** 2
        return lambda x: -th * x * phi.d1(x) + 0.5 * s2 * phi.d2(x)

    def describe(self):
        return {"name": self.name, "theta": self.theta, "sigma": self.sigma}


class GirsanovDynamics(Dynamics):
    """``dX = sigma_alpha(X) dW`` under one selection at the origin."""

    name = "girsanov"

    def __init__(self, alpha: float = 0.25, kind: str = "no_delay", rate: float | None = None,
                 dt: float = 1e-2, substeps: int = girsanov.DEFAULT_SUBSTEPS):
        if kind not in ("no_delay", "delayed", "absorbed"):
            raise DynamicsError(f"unknown selection {kind!r}")
        if kind == "delayed" and rate is None:
            raise DynamicsError("the delayed selection needs a clock rate")
        self.alpha, self.kind, self.rate = float(alpha), kind, rate
        self.dt, self.substeps = float(dt), int(substeps)

    def paths(self, x, grid, n_paths, rng):
        return girsanov.ensemble(self.kind, self.alpha, x, grid, n_paths, rng, self.rate, self.substeps)

    def generator(self, phi: Observable) -> Callable:
        """Ito generator of the simulated equation, ``sigma^2 phi'' / 2``."""
        a = self.alpha
        return lambda x: 0.5 * girsanov.sigma_alpha(a, x) ** 2 * phi.d2(x)

    def describe(self):
        return {"name": self.name, "alpha": self.alpha, "selection": self.kind,
                "rate": self.rate, "dt": self.dt, "substeps": self.substeps}


class StroockYorDynamics(Dynamics):
    name = "stroockyor"

    def __init__(self, family: str = "wiener", dt: float = 1e-2,
                 substeps: int = stroockyor.DEFAULT_SUBSTEPS):
        if family not in stroockyor.FAMILIES:
            raise DynamicsError(f"unknown family {family!r}")
        self.family, self.dt, self.substeps = family, float(dt), int(substeps)

    def check_state(self, x) -> None:
        if self.family != "wiener" and float(x) < 0:
            raise DynamicsError(f"{self.family} lives on [0, inf)")

    def paths(self, x, grid, n_paths, rng):
        self.check_state(x)
        return stroockyor.simulate_ensemble(self.family, x, grid, n_paths, rng, self.substeps)

    def describe(self):
        return {"name": self.name, "family": self.family, "dt": self.dt}


@dataclass
class NSEDynamics(Dynamics):
    """Cut-off Galerkin system; observables are callables on ``(n, M, 3)`` states."""

    params: nse.GalerkinParams
    cutoff: nse.CutoffSpec
    noise: nse.NoiseSpec
    nonlinear: bool = True
    name: str = field(default="nse", init=False)

    def __post_init__(self):
        self.stepper = nse.Stepper(self.params, self.cutoff, self.noise, self.nonlinear)
        self.dt = self.params.dt

    def evaluate(self, phi, states):
        return np.asarray(phi(states), dtype=float)

    def phi_at(self, phi, x) -> float:
        c = x.coeffs if isinstance(x, nse.SpectralField) else np.asarray(x)
        return float(np.asarray(phi(c[None]))[0])

    def sup_norm(self, phi) -> float | None:
        if isinstance(phi, nse.CylinderFunction) and phi.profile.name == "cosine":
            return 1.0
        return getattr(phi, "bound", None)

    def sample(self, x, phi, times, n_paths, rng):
        times = np.asarray(times, dtype=float)
        grid = self.grid_for(float(times.max()) if times.size else 0.0)
        run = nse.simulate_ensemble(x, self.stepper, n_paths, rng,
                                    {"phi": lambda u, w: phi(u)}, n_steps=grid.n_steps)
        return interpolate_nodes(run.observations["phi"], grid, times)

    def paths(self, x, grid, n_paths, rng):
        raise DynamicsError("nse states are not scalar; use sample")

    def formal_generator(self, phi, x) -> float:
        return nse.formal_generator_cylinder(x, phi, self.noise, self.params.nu, self.cutoff,
                                             self.noise.alpha0, self.nonlinear)

    def describe(self):
        return {"name": self.name, "N": self.params.N, "nu": self.params.nu, "dt": self.params.dt,
                "R": self.cutoff.R, "alpha0": self.noise.alpha0, "nonlinear": self.nonlinear}


def make_dynamics(name: str, **kw) -> Dynamics:
    table = {
        "peano": PeanoDynamics,
        "brownian": BrownianDynamics,
        "linear": LinearDynamics,
        "girsanov": GirsanovDynamics,
        "stroockyor": StroockYorDynamics,
    }
    if name not in table:
        raise DynamicsError(f"unknown dynamics {name!r}; known: {sorted(table)} (nse is built from parameters)")
    return table[name](**kw)
