"""Brownian families for the operator ``1/2 1_G d^2/dx^2 + 1_{0} d/dx``.

Three families are provided:

* ``wiener``: ``x + B``, never sees the drift at 0;
* ``sticky``: Brownian motion that, once at 0, is pushed into ``[0, inf)``
  with unit speed while at 0 (it spends positive time there). From ``x < 0``
  it is Brownian until it first reaches 0;
* ``reflected``: ``|x + B|`` (and Brownian-then-reflected from ``x < 0``).
  It spends no time at 0, so the boundary drift is never realized and the
  family fails the submartingale test for ``phi = 2t - x``; it is kept as a
  documented negative control.

Kernels are closed form up to one-dimensional hitting-time integrals which
are evaluated by Gauss-Legendre quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq
from scipy.special import ndtr

from .pathcore import (
    MartingaleReport,
    RandomSource,
    SamplePath,
    TimeGrid,
    martingale_increment_test,
    quantile_bin_predictors,
    trapezoid_cumulative,
)

FAMILIES = ("wiener", "sticky", "reflected")
DEFAULT_SUBSTEPS = 8


class StroockYorError(ValueError):
    pass


class InadmissibleTestFunction(StroockYorError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    family: str
    t: float
    x: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise StroockYorError(f"unknown family {self.family!r}; known: {FAMILIES}")
        if not self.t > 0:
            raise StroockYorError(f"kernel time must be positive, got {self.t}")


# ---------------------------------------------------------------------------
# densities


def _phi(t, z):
    return np.exp(-0.5 * z * z / t) / math.sqrt(2.0 * math.pi * t)


def _hit(a, s):
    """First-passage density of level ``a > 0`` at time ``s``."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / np.sqrt(2.0 * math.pi * s ** 3) * np.exp(-0.5 * a * a / s)
    return np.where(s > 0, out, 0.0)


_GL = leggauss(48)


def _time_integral(g: Callable, t: float, panels: int = 16) -> np.ndarray:
    """``int_0^t g(l) dl`` for ``g`` vectorized in its last axis."""
    x, w = _GL
    edges = np.linspace(0.0, t, panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w[None, :]).ravel()
    return np.sum(g(nodes) * weights, axis=-1)


def sticky_atom(t: float, x: float) -> float:
    """Mass at 0 at time ``t`` for the sticky family from ``x``."""
    c = abs(x)
    return float(_time_integral(lambda l: _hit(l + c, t - l), t))


def kernel_density(spec: KernelSpec, y) -> np.ndarray | float:
    """Density of the continuous part of the time-``t`` law at ``y``.

    The sticky family also carries an atom at 0, see :func:`kernel_atom`.
    """
    y = np.asarray(y, dtype=float)
    t, x = spec.t, spec.x
    if spec.family == "wiener":
        out = _phi(t, y - x)
    elif spec.family == "reflected":
        if x >= 0:
            out = np.where(y >= 0, _phi(t, y - x) + _phi(t, y + x), 0.0)
        else:
            # killed Brownian part below 0, hitting-time convolution above it
            out = np.where(y < 0, _phi(t, y - x) - _phi(t, y + x), 2.0 * _phi(t, y - x))
    else:
        c = abs(x)
        yy = np.atleast_1d(y).ravel()
        pos = np.maximum(yy, 0.0)
        conv = _time_integral(lambda l: 2.0 * _hit(l + c + pos[:, None], t - l), t)
        above = conv + (np.where(x > 0, _phi(t, yy - x) - _phi(t, yy + x), 0.0))
        below = np.where(x < 0, _phi(t, yy - x) - _phi(t, yy + x), 0.0)
        out = np.where(yy > 0, above, np.where(yy < 0, below, 0.0))
        out = out.reshape(y.shape)
    return float(out) if np.ndim(out) == 0 else out


def kernel_atom(spec: KernelSpec) -> float:
    return sticky_atom(spec.t, spec.x) if spec.family == "sticky" else 0.0


def _support(spec: KernelSpec) -> tuple[float, float]:
    w = 40.0 * math.sqrt(spec.t)
    lo = spec.x - w
    if spec.family != "wiener" and spec.x >= 0:
        lo = 0.0
    return lo, max(spec.x, 0.0) + w


def _breakpoints(spec: KernelSpec) -> list[float]:
    pts = [spec.x]
    if spec.family != "wiener":
        pts.append(0.0)
    return pts


def _segment_quad(g: Callable, pts, n: int = 64, per_unit: float = 4.0) -> float:
    x, w = leggauss(n)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        panels = max(1, int(math.ceil((b - a) * per_unit)))
        edges = np.linspace(a, b, panels + 1)
        lo, hi = edges[:-1, None], edges[1:, None]
        nodes = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
        total += float(np.sum(0.5 * (hi - lo) * w[None, :] * g(nodes.ravel()).reshape(nodes.shape)))
    return total


def kernel_mass(spec: KernelSpec) -> float:
    """Total mass: quadrature of the density plus the atom."""
    lo, hi = _support(spec)
    pts = sorted({lo, hi, *[p for p in _breakpoints(spec) if lo < p < hi]})
    per_unit = 4.0 / math.sqrt(spec.t)
    return _segment_quad(lambda y: kernel_density(spec, y), pts, per_unit=per_unit) + kernel_atom(spec)


def kernel_tv(a: KernelSpec, b: KernelSpec) -> float:
    """TV distance of two kernels from densities: sign changes are located and
    used as panel breakpoints so the absolute value is integrated smoothly."""
    lo = min(_support(a)[0], _support(b)[0])
    hi = max(_support(a)[1], _support(b)[1])
    diff = lambda y: kernel_density(a, y) - kernel_density(b, y)
    brk = sorted({lo, hi, *[p for p in _breakpoints(a) + _breakpoints(b) if lo < p < hi]})
    roots = []
    for u, v in zip(brk[:-1], brk[1:]):
        grid = np.linspace(u, v, 801)[1:-1]
        d = diff(grid)
        for i in np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0):
            roots.append(brentq(diff, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14))
    pts = sorted(set(brk) | set(roots))
    t = min(a.t, b.t)
    cont = _segment_quad(lambda y: np.abs(diff(y)), pts, per_unit=4.0 / math.sqrt(t))
    return 0.5 * (cont + abs(kernel_atom(a) - kernel_atom(b)))


def strong_feller_modulus(family: str, t: float, x: float, xprime: float) -> float:
    if x == xprime:
        return 0.0
    return kernel_tv(KernelSpec(family, t, x), KernelSpec(family, t, xprime))


def wiener_tv_closed_form(t: float, dx: float) -> float:
    return float(2.0 * ndtr(abs(dx) / (2.0 * math.sqrt(t))) - 1.0)


# ---------------------------------------------------------------------------
# simulation


def _fine_brownian(x: float, n: int, h: float, gen: np.random.Generator) -> np.ndarray:
    out = np.empty(n + 1)
    out[0] = x
    np.cumsum(gen.standard_normal(n) * math.sqrt(h), out=out[1:])
    out[1:] += x
    return out


def _first_nonneg(y: np.ndarray) -> int | None:
    hit = np.flatnonzero(y >= 0.0)
    return None if hit.size == 0 else int(hit[0])


def simulate_family(family: str, x: float, grid: TimeGrid, rng: RandomSource,
                    substeps: int = DEFAULT_SUBSTEPS) -> SamplePath:
    """One path of a family; ``rng`` drives a Brownian motion on a clock
    ``substeps`` times finer than ``grid`` (only the sticky family uses the
    finer nodes between grid nodes)."""
    if family not in FAMILIES:
        raise StroockYorError(f"unknown family {family!r}")
    if grid.t0 != 0.0:
        raise StroockYorError("simulations start at time 0")
    gen = rng.generator()
    n = grid.n_steps
    if family == "wiener":
        return SamplePath(grid, _fine_brownian(x, n, grid.dt, gen))
    if family == "reflected":
        y = _fine_brownian(x, n, grid.dt, gen)
        if x >= 0:
            return SamplePath(grid, np.abs(y))
        k = _first_nonneg(y)
        if k is not None:
            # restart from 0 at the crossing node, reflect the later increments
            y[k:] = np.abs(y[k:] - y[k])
        return SamplePath(grid, y)
    return SamplePath(grid, _sticky_path(x, grid, gen, substeps))


def _sticky_path(x: float, grid: TimeGrid, gen, substeps: int) -> np.ndarray:
    """Time change of reflected Brownian motion by ``s + l_s``.

    ``l`` is the discrete Skorokhod regulator of the free path; every fine
    step on which it grows inserts a flat piece at 0 of that duration.
    """
    h = grid.dt / substeps
    horizon = grid.horizon
    n = int(math.ceil(horizon / h)) + 1
    y = _fine_brownian(x, n, h, gen)
    k0 = 0
    if x < 0:
        k = _first_nonneg(y)
        if k is None:
            return np.interp(grid.times, h * np.arange(n + 1), y)
        k0 = k
    r = y.copy()
    lt = np.zeros(n + 1)
    free = y[k0:] - (y[k0] if x < 0 else 0.0)
    if x < 0:
        free[0] = 0.0
    reg = np.maximum.accumulate(np.maximum(-free, 0.0))
    r[k0:] = free + reg
    lt[k0:] = reg
    grow = np.flatnonzero(np.diff(lt) > 0) + 1
    s = h * np.arange(n + 1)
    A = s + lt
    # before each growing node, the process arrives at 0 and waits there
    A_ins = s[grow] + lt[grow - 1]
    A_all = np.concatenate([A, A_ins])
    v_all = np.concatenate([r, np.zeros(grow.size)])
    o = np.argsort(A_all, kind="stable")
    A_all, v_all = A_all[o], v_all[o]
    out = np.interp(grid.times, A_all, v_all)
    # exact zeros on the waiting pieces
    lo, hi = A_ins, A[grow]
    idx = np.searchsorted(hi, grid.times, side="left")
    inside = idx < hi.size
    inside[inside] &= grid.times[inside] >= lo[idx[inside]]
    out[inside] = 0.0
    if x >= 0 and x == 0.0:
        out[0] = 0.0
    return out


def simulate_ensemble(family: str, x, grid: TimeGrid, n_paths: int, rng: RandomSource,
                      substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Row ``i`` equals ``simulate_family`` with ``rng.child(i)``."""
    xs = np.broadcast_to(np.asarray(x, dtype=float), (n_paths,))
    out = np.empty((n_paths, grid.n_steps + 1))
    for i in range(n_paths):
        out[i] = simulate_family(family, float(xs[i]), grid, rng.child(i), substeps).scalar
    return out


# ---------------------------------------------------------------------------
# submartingale characterization


@dataclass(frozen=True)
class BoundaryTestFunction:
    """``phi(t, x)`` with the derivatives the compensator needs.

    Construction checks the boundary condition ``phi_t(t, 0) + phi_x(t, 0) >= 0``
    on a sampled time range.
    """

    name: str
    phi: Callable
    phi_t: Callable
    phi_x: Callable
    phi_xx: Callable
    check_horizon: float = 10.0

    def __post_init__(self):
        ts = np.linspace(0.0, self.check_horizon, 1001)
        b = self.boundary_slope(ts)
        if np.any(b < 0):
            t_bad = float(ts[int(np.argmax(b < 0))])
            raise InadmissibleTestFunction(
                f"{self.name}: phi_t(t,0) + phi_x(t,0) = {float(np.min(b)):g} < 0 (t={t_bad:g})"
            )

    def boundary_slope(self, t):
        t = np.asarray(t, dtype=float)
        z = np.zeros_like(t)
        return np.asarray(self.phi_t(t, z) + self.phi_x(t, z), dtype=float) + z


def _tf(name, phi, phi_t, phi_x, phi_xx):
    return BoundaryTestFunction(name, phi, phi_t, phi_x, phi_xx)


def registry() -> dict[str, BoundaryTestFunction]:
    zero = lambda t, x: np.zeros(np.broadcast(t, x).shape)
    one = lambda t, x: np.ones(np.broadcast(t, x).shape)
    return {
        f.name: f
        for f in [
            _tf("x", lambda t, x: x + 0 * t, zero, one, zero),
            _tf("2t-x", lambda t, x: 2 * t - x, lambda t, x: 2 * one(t, x), lambda t, x: -one(t, x), zero),
            _tf("x2+t", lambda t, x: x * x + t, one, lambda t, x: 2 * x + 0 * t, lambda t, x: 2 * one(t, x)),
            _tf("sin", lambda t, x: np.sin(x) + 0 * t, zero, lambda t, x: np.cos(x) + 0 * t,
                lambda t, x: -np.sin(x) + 0 * t),
            _tf("exp-t x+t", lambda t, x: np.exp(-t) * x + t, lambda t, x: 1 - np.exp(-t) * x,
                lambda t, x: np.exp(-t) + 0 * x, zero),
        ]
    }


def negative_x() -> BoundaryTestFunction:
    """``phi = -x``; its construction raises ``InadmissibleTestFunction``."""
    return _tf("-x", lambda t, x: -x, lambda t, x: 0 * x, lambda t, x: -1 + 0 * x, lambda t, x: 0 * x)


def compensated_process(paths: np.ndarray, grid: TimeGrid, f: BoundaryTestFunction) -> np.ndarray:
    """``Z_t = phi(t, xi_t) - int_0^t 1_G(xi)[phi_t + phi_xx / 2](r, xi_r) dr``."""
    t = grid.times[None, :]
    g = (paths != 0.0) * (f.phi_t(t, paths) + 0.5 * f.phi_xx(t, paths))
    return f.phi(t, paths) - trapezoid_cumulative(g, grid.dt)


DEFAULT_PAIRS = ((0.25, 0.5), (0.5, 1.0))


def submartingale_check(family: str, x: float, f: BoundaryTestFunction, grid: TimeGrid,
                        n_paths: int, rng: RandomSource, pairs=DEFAULT_PAIRS,
                        n_bins: int = 3, paths: np.ndarray | None = None) -> MartingaleReport:
    """One-sided regression test of ``E[Z_t - Z_s | xi_s bin] >= 0``."""
    if paths is None:
        paths = simulate_ensemble(family, x, grid, n_paths, rng)
    z = compensated_process(paths, grid, f)
    return martingale_increment_test(
        paths, z, grid, pairs, predictors=quantile_bin_predictors(n_bins),
        predictor_names=[f"bin{j}" for j in range(n_bins)],
    )
