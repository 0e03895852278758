"""The degenerate SDE ``dX = sigma_alpha(X) dW`` and its Markov selections.

Paths are built from a Brownian motion on a finer clock: the additive
functional ``S = int sigma^-2(x + W)`` is accumulated on that clock, the
no-delay solution is ``x + W`` read through the inverse of ``S``, and
delayed solutions insert exponential waiting periods at zero driven by the
local time of ``x + W`` (local time is invariant under the time change, so it
is estimated on the Brownian clock where the path is well resolved).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .pathcore import (
    EmpiricalLaw,
    PathError,
    RandomSource,
    SamplePath,
    Summary,
    TimeGrid,
    invert_increasing,
    mean_summary,
    trapezoid_cumulative,
)

DEFAULT_SUBSTEPS = 16


class GirsanovError(ValueError):
    pass


class LocalTimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AlphaCoefficient:
    alpha: float

    def __post_init__(self):
        if not (0 < self.alpha < 0.5):
            raise GirsanovError(f"alpha must lie in (0, 1/2), got {self.alpha}")


def _alpha(a) -> float:
    return a.alpha if isinstance(a, AlphaCoefficient) else AlphaCoefficient(float(a)).alpha


@dataclass(frozen=True)
class StickyParam:
    """Boundary behaviour at 0: ``c = 0`` no time at 0, ``c = inf`` absorbing."""

    c: float

    def __post_init__(self):
        if math.isnan(self.c) or self.c < 0:
            raise GirsanovError(f"sticky parameter must lie in [0, inf], got {self.c}")

    @property
    def absorbing(self) -> bool:
        return math.isinf(self.c)


@dataclass(frozen=True)
class ClockSpec:
    rate: float

    def __post_init__(self):
        if not (self.rate > 0) or math.isinf(self.rate):
            raise GirsanovError(f"clock rate must be positive and finite, got {self.rate}")


def sigma_alpha(alpha, x):
    a = _alpha(alpha)
    p = np.abs(np.asarray(x, dtype=float)) ** a
    out = p / (1.0 + p)
    return float(out) if out.ndim == 0 else out


def cap_level(alpha, h: float) -> float:
    """Distance from 0 below which ``sigma^-2`` is frozen on a clock of step ``h``."""
    return h ** (1.0 / (2.0 - 2.0 * _alpha(alpha)))


def capped_inverse_square(alpha, x, h: float):
    """``min(sigma^-2(x), M)`` with ``M = sigma^-2(cap_level)``."""
    e = cap_level(alpha, h)
    return sigma_alpha(alpha, np.maximum(np.abs(x), e)) ** -2


# ---------------------------------------------------------------------------
# time change


@dataclass(frozen=True)
class TimeChange:
    S: SamplePath
    T: SamplePath

    def compose_error(self) -> float:
        """``max |S(T(r)) - r|`` over the nodes of ``T``."""
        s = np.interp(self.T.scalar, self.S.times, self.S.scalar)
        return float(np.max(np.abs(s - self.T.times)))


def additive_functional(alpha, x0: float, W: SamplePath,
                        sigma: Callable | None = None) -> TimeChange:
    """``S_t = int_0^t sigma^-2(x0 + W_s) ds`` and its inverse.

    ``sigma`` replaces the coefficient (test hook); the default uses the
    capped integrand so a node sitting exactly at 0 stays finite.
    """
    x = x0 + W.scalar
    h = W.grid.dt
    if sigma is None:
        f = capped_inverse_square(alpha, x, h)
    else:
        f = np.asarray(sigma(x), dtype=float) ** -2
    s = trapezoid_cumulative(f, h)
    if not np.all(np.isfinite(s)):
        raise GirsanovError("additive functional overflowed")
    S = SamplePath(W.grid, s)
    return TimeChange(S, invert_increasing(S))


def _brownian_until(alpha, x0, horizon, h, gen, sigma=None):
    """Brownian clock extended in chunks until ``S`` passes ``horizon``.

    Returns ``(x, S)`` on the nodes ``k h``. Since ``sigma < 1`` the
    functional grows at least linearly, so ``horizon / h`` steps always
    suffice; the first chunk is sized from the starting point.
    """
    s0 = sigma_alpha(alpha, x0) if sigma is None else float(sigma(np.array(x0)))
    chunk = max(64, int(math.ceil(horizon * max(s0, 0.05) ** 2 / h * 1.5)))
    xs = [np.array([float(x0)])]
    ss = [np.array([0.0])]
    x_last, s_last, f_last = float(x0), 0.0, None
    sq = math.sqrt(h)
    total = 0
    while s_last < horizon:
        n = min(chunk, int(math.ceil(horizon / h)) + 2 - total)
        n = max(n, 16)
        z = gen.standard_normal(n)
        x = x_last + np.cumsum(z) * sq
        if sigma is None:
            f = capped_inverse_square(alpha, x, h)
        else:
            f = np.asarray(sigma(x), dtype=float) ** -2
        if f_last is None:
            f_last = (capped_inverse_square(alpha, np.array([x0]), h)[0] if sigma is None
                      else float(np.asarray(sigma(np.array([x0])), dtype=float)[0] ** -2))
        inc = 0.5 * h * (np.concatenate([[f_last], f[:-1]]) + f)
        s = s_last + np.cumsum(inc)
        xs.append(x)
        ss.append(s)
        x_last, s_last, f_last = float(x[-1]), float(s[-1]), float(f[-1])
        total += n
    return np.concatenate(xs), np.concatenate(ss)


# ---------------------------------------------------------------------------
# local time


def default_epsilon(values: np.ndarray) -> float:
    d = np.abs(np.diff(values))
    return 10.0 * float(d.mean()) if d.size else 0.0


def _local_time_increments(x, level, eps):
    dx2 = np.diff(x) ** 2
    inside = np.abs(x[:-1] - level) < eps
    return np.where(inside, dx2, 0.0) / (2.0 * eps), int(inside.sum())


def local_time_estimate(path: SamplePath, level: float = 0.0,
                        epsilon: float | None = None) -> SamplePath:
    """``(1/2 eps) int 1{|X - level| < eps} d[X]`` on the path's own grid."""
    x = path.scalar
    eps = default_epsilon(x) if epsilon is None else float(epsilon)
    if not eps > 0:
        raise GirsanovError(f"epsilon must be positive, got {eps}")
    inc, n_inside = _local_time_increments(x, level, eps)
    if 0 < n_inside < 100:
        warnings.warn(
            f"only {n_inside} increments inside the band; local time estimate is unreliable",
            LocalTimeWarning, stacklevel=2,
        )
    out = np.zeros_like(x)
    np.cumsum(inc, out=out[1:])
    return SamplePath(path.grid, out)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class DelayRecord:
    """Inserted waiting periods, in the time of the delayed process."""

    starts: np.ndarray
    lengths: np.ndarray
    truncated: bool = False
    flags: set = field(default_factory=set)


def _crossing(x, m):
    """Fractional node position of the zero of the chord between ``m`` and ``m+1``."""
    a, b = x[m], x[m + 1]
    if a == 0.0:
        return float(m)
    return m + a / (a - b)


def _bridge_read(x, q, h, gen):
    """Values of the Brownian path at fractional node positions ``q``.

    Between nodes the path is a Brownian bridge; reads falling in the same
    cell are sampled jointly. ``q`` must be nondecreasing. Linear
    interpolation instead would lose about ``h/3`` of quadratic variation
    per read.
    """
    m = np.minimum(np.floor(q).astype(np.int64), x.size - 2)
    f = q - m
    y = x[m] + f * (x[m + 1] - x[m])
    idx = np.flatnonzero((f > 0) & (f < 1))
    if idx.size == 0:
        return y
    mi = m[idx]
    si = f[idx] * h
    new = np.r_[True, mi[1:] != mi[:-1]]
    last = np.r_[mi[1:] != mi[:-1], True]
    prev = np.where(new, 0.0, np.r_[0.0, si[:-1]])
    z = gen.standard_normal(idx.size + int(last.sum()))
    dz = np.sqrt(np.maximum(si - prev, 0.0)) * z[: idx.size]
    zc = np.cumsum(dz)
    grp = np.cumsum(new) - 1
    zseg = zc - (zc - dz)[new][grp]
    zh = zseg[last] + np.sqrt(np.maximum(h - si[last], 0.0)) * z[idx.size:]
    dx = x[mi + 1] - x[mi]
    y[idx] = x[mi] + zseg - (si / h) * (zh[grp] - dx)
    return y


def _delayed_single(alpha, x0, horizon, grid, h, w_gen, clock_gen, rate,
                    sigma=None, zero_delays=False, eps=None, bridge_gen=None):
    x, s = _brownian_until(alpha, x0, horizon, h, w_gen, sigma)
    U = np.arange(x.size, dtype=float)
    A = s.copy()
    starts, lengths = [], []
    if rate is not None:
        inc, _ = _local_time_increments(x, 0.0, eps if eps else default_epsilon(x))
        L = np.zeros_like(x)
        np.cumsum(inc, out=L[1:])
        cross = np.flatnonzero(x[:-1] * x[1:] <= 0.0)
        ins_pos, ins_len = [], []
        if x0 == 0.0:
            s0 = 0.0 if zero_delays else float(clock_gen.exponential(1.0 / rate))
            ins_pos.append(0.0)
            ins_len.append(s0)
        start = 0
        while True:
            thr = L[start] + float(clock_gen.exponential(1.0 / rate))
            j = int(np.searchsorted(L, thr, side="right"))
            if j >= x.size:
                break
            c = int(np.searchsorted(cross, max(j - 1, start), side="left"))
            if c >= cross.size:
                break
            m = int(cross[c])
            length = 0.0 if zero_delays else float(clock_gen.exponential(1.0 / rate))
            ins_pos.append(_crossing(x, m))
            ins_len.append(length)
            start = m + 1
        # real-time clock: each delay is a flat piece of value 0 at its crossing
        pos = np.asarray(ins_pos, dtype=float)
        ln = np.asarray(ins_len, dtype=float)
        keep = ln > 0
        pos, ln = pos[keep], ln[keep]
        if pos.size:
            order = np.argsort(pos, kind="stable")
            pos, ln = pos[order], ln[order]
            d_cum = np.concatenate([[0.0], np.cumsum(ln)])
            k = np.arange(s.size)
            A = s + d_cum[np.searchsorted(pos, k, side="left")]
            lo = np.interp(pos, k, s) + d_cum[:-1]
            hi = lo + ln
            A = np.concatenate([A, lo, hi])
            U = np.concatenate([U, pos, pos])
            o = np.argsort(A, kind="stable")
            A, U = A[o], U[o]
            starts, lengths = list(lo), list(ln)
    t = grid.times
    q = np.maximum.accumulate(np.interp(t, A, U))
    if bridge_gen is None:
        y = np.interp(q, np.arange(x.size, dtype=float), x)
    else:
        y = _bridge_read(x, q, h, bridge_gen)
    rec = DelayRecord(np.asarray(starts, dtype=float), np.asarray(lengths, dtype=float))
    flags = set()
    for a0, l0 in zip(rec.starts, rec.lengths):
        inside = (t >= a0) & (t <= a0 + l0)
        y[inside] = 0.0
        if a0 <= horizon < a0 + l0:
            rec.truncated = True
    if rec.truncated:
        flags.add("truncated_delay")
    rec.flags = flags
    return y, rec


def _check_grid(grid: TimeGrid):
    if grid.t0 != 0.0:
        raise GirsanovError("simulations start at time 0")


def simulate_no_delay(alpha, x0: float, grid: TimeGrid, rng: RandomSource,
                      substeps: int = DEFAULT_SUBSTEPS, sigma: Callable | None = None) -> SamplePath:
    """The solution spending no time at 0: ``x0 + W`` through the inverse of ``S``."""
    _check_grid(grid)
    y, _ = _delayed_single(alpha, x0, grid.horizon, grid, grid.dt / substeps,
                           rng.child(0).generator(), None, None, sigma=sigma,
                           bridge_gen=rng.child(2).generator())
    return SamplePath(grid, y)


def simulate_delayed(alpha, x0: float, clock: ClockSpec, grid: TimeGrid, rng: RandomSource,
                     substeps: int = DEFAULT_SUBSTEPS, zero_delays: bool = False,
                     epsilon: float | None = None, return_record: bool = False):
    """Solution delayed at 0 by exponential clocks of rate ``clock.rate``.

    ``zero_delays`` forces every waiting time to 0 (test hook). With
    ``return_record`` the inserted delays are returned alongside the path.
    """
    _check_grid(grid)
    if not isinstance(clock, ClockSpec):
        clock = ClockSpec(float(clock))
    y, rec = _delayed_single(
        alpha, x0, grid.horizon, grid, grid.dt / substeps,
        rng.child(0).generator(), rng.child(1).generator(), clock.rate,
        zero_delays=zero_delays, eps=epsilon, bridge_gen=rng.child(2).generator(),
    )
    path = SamplePath(grid, y, flags=frozenset(rec.flags))
    return (path, rec) if return_record else path


def absorption_threshold(alpha, dt: float) -> float:
    return 3.0 * sigma_alpha(alpha, math.sqrt(dt)) * math.sqrt(dt)


def _absorb(y: np.ndarray, thr: float) -> tuple[np.ndarray, int | None]:
    hit = np.flatnonzero(np.abs(y) < thr)
    if hit.size == 0:
        return y, None
    k = int(hit[0])
    y = y.copy()
    y[k:] = 0.0
    return y, k


def simulate_absorbed(alpha, x0: float, grid: TimeGrid, rng: RandomSource,
                      substeps: int = DEFAULT_SUBSTEPS) -> SamplePath:
    """The no-delay path stopped at the first node within the absorption threshold."""
    _check_grid(grid)
    if x0 == 0.0:
        return SamplePath(grid, np.zeros(grid.n_steps + 1), stop_index=0, flags={"absorbed"})
    base = simulate_no_delay(alpha, x0, grid, rng, substeps)
    y, k = _absorb(base.scalar, absorption_threshold(alpha, grid.dt))
    flags = {"absorbed"} if k is not None else set()
    return SamplePath(grid, y, stop_index=k, flags=flags)


def ensemble(kind: str, alpha, x0, grid: TimeGrid, n_paths: int, rng: RandomSource,
             rate: float | None = None, substeps: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Paths of one selection, shape ``(n_paths, n_steps + 1)``.

    Row ``i`` equals the single-path simulation with ``rng.child(i)``.
    ``x0`` may be a scalar or one starting point per path.
    """
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,))
    out = np.empty((n_paths, grid.n_steps + 1))
    for i in range(n_paths):
        r = rng.child(i)
        if kind == "no_delay":
            out[i] = simulate_no_delay(alpha, x0s[i], grid, r, substeps).scalar
        elif kind == "delayed":
            out[i] = simulate_delayed(alpha, x0s[i], ClockSpec(rate), grid, r, substeps).scalar
        elif kind == "absorbed":
            out[i] = simulate_absorbed(alpha, x0s[i], grid, r, substeps).scalar
        else:
            raise GirsanovError(f"unknown selection {kind!r}")
    return out


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class TestFunction:
    """``u`` with second derivative away from 0 and one-sided slopes at 0."""

    u: Callable
    d2: Callable
    slope_left: float | None = None
    slope_right: float | None = None

    __test__ = False  # not a pytest class


def generator_action(c, u: TestFunction, x: float, alpha) -> float:
    c = c if isinstance(c, StickyParam) else StickyParam(float(c))
    if x != 0.0:
        return float(sigma_alpha(alpha, x) ** 2 * u.d2(x))
    if c.absorbing:
        return 0.0
    if c.c == 0.0:
        vals = [sigma_alpha(alpha, d) ** 2 * u.d2(d) for d in (1e-12, -1e-12, 1e-14, -1e-14)]
        if max(vals) - min(vals) > 1e-6:
            raise GirsanovError("sigma^2 u'' has no limit at 0")
        return float(np.mean(vals[2:]))
    if u.slope_left is None or u.slope_right is None:
        raise GirsanovError("one-sided derivatives at 0 are required for c > 0")
    return (u.slope_right - u.slope_left) / c.c


# ---------------------------------------------------------------------------
# damped variant


def simulate_damped_ensemble(alpha, x0, sticky, grid: TimeGrid, n_paths: int, rng: RandomSource,
                             sigma_scale: float = 1.0) -> np.ndarray:
    """Euler-Maruyama for ``dX = -X dt + sigma_alpha(X) dW``.

    ``sticky`` must be 0 (plain scheme) or inf (frozen at 0 once within the
    absorption threshold). ``sigma_scale = 0`` switches the noise off (test
    hook). Row ``i`` uses ``rng.child(i)``.
    """
    _check_grid(grid)
    sticky = sticky if isinstance(sticky, StickyParam) else StickyParam(float(sticky))
    if sticky.c not in (0.0, math.inf):
        raise GirsanovError("the damped scheme supports sticky in {0, inf} only")
    if grid.dt >= 0.5:
        raise GirsanovError(f"step {grid.dt} fails the stability guard dt < 0.5")
    x0s = np.broadcast_to(np.asarray(x0, dtype=float), (n_paths,)).copy()
    thr = absorption_threshold(alpha, grid.dt) if sticky.absorbing else -1.0
    dw = np.empty((n_paths, grid.n_steps))
    sq = math.sqrt(grid.dt)
    for i in range(n_paths):
        dw[i] = rng.child(i).generator().standard_normal(grid.n_steps) * sq
    return kernels.damped_em(x0s, dw, grid.dt, _alpha(alpha), thr, float(sigma_scale))


def simulate_damped(alpha, x0: float, sticky, grid: TimeGrid, rng: RandomSource,
                    sigma_scale: float = 1.0) -> SamplePath:
    """Single damped path; equals row ``i`` of the ensemble for ``rng.child(i)``."""
    _check_grid(grid)
    sticky = sticky if isinstance(sticky, StickyParam) else StickyParam(float(sticky))
    if sticky.c not in (0.0, math.inf):
        raise GirsanovError("the damped scheme supports sticky in {0, inf} only")
    if grid.dt >= 0.5:
        raise GirsanovError(f"step {grid.dt} fails the stability guard dt < 0.5")
    thr = absorption_threshold(alpha, grid.dt) if sticky.absorbing else -1.0
    dw = rng.generator().standard_normal(grid.n_steps)[None, :] * math.sqrt(grid.dt)
    y = kernels.damped_em(np.array([float(x0)]), dw, grid.dt, _alpha(alpha), thr,
                          float(sigma_scale))[0]
    flags = {"c0_selection_assumed"} if sticky.c == 0.0 else set()
    return SamplePath(grid, y, flags=flags)


def invariant_histogram(alpha, sticky, burn_in: float, horizon: float, grid_dt: float,
                        rng: RandomSource, n_paths: int = 200, x0: float = 1.0,
                        thin: int = 1) -> EmpiricalLaw:
    """Time-averaged occupation of the damped process after ``burn_in``.

    The atom at 0 (absorbed nodes) is reported separately; its standard
    error comes from the per-path atom fractions.
    """
    if not horizon > burn_in:
        raise GirsanovError("horizon must exceed burn_in")
    grid = TimeGrid.from_horizon(horizon, grid_dt)
    paths = simulate_damped_ensemble(alpha, x0, sticky, grid, n_paths, rng)
    k0 = int(math.ceil(burn_in / grid_dt))
    tail = paths[:, k0::thin]
    at_zero = tail == 0.0
    per_path = at_zero.mean(axis=1)
    atom = float(per_path.mean())
    se = float(per_path.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return EmpiricalLaw(tail[~at_zero].ravel(), atom_mass=atom, atom_at=0.0, atom_std_error=se)


# ---------------------------------------------------------------------------
# diagnostics used by experiments


def quadratic_variation_check(alpha, x0: float, grid: TimeGrid, n_paths: int,
                              rng: RandomSource, substeps: int = DEFAULT_SUBSTEPS) -> dict:
    """Realized ``[X]_T`` against ``int sigma^2(X) ds`` on no-delay paths."""
    paths = ensemble("no_delay", alpha, x0, grid, n_paths, rng, substeps=substeps)
    qv = np.sum(np.diff(paths, axis=1) ** 2, axis=1)
    integ = np.trapezoid(sigma_alpha(alpha, paths) ** 2, dx=grid.dt, axis=1)
    ratio = float(qv.mean() / integ.mean())
    d = qv / integ.mean() - ratio * integ / integ.mean()
    return {
        "qv_mean": float(qv.mean()),
        "integral_mean": float(integ.mean()),
        "ratio": ratio,
        "ratio_std_error": float(d.std(ddof=1) / math.sqrt(n_paths)),
        "paths": paths,
    }


def occupation_near_zero(paths: np.ndarray, dt: float, eps: float) -> Summary:
    """Per-path time spent in ``(-eps, eps)``, averaged over the ensemble."""
    occ = (np.abs(paths[:, :-1]) < eps).sum(axis=1) * dt
    return mean_summary(f"occupation_eps_{eps:g}", occ)


def time_at_zero(paths: np.ndarray, dt: float) -> np.ndarray:
    return (paths[:, :-1] == 0.0).sum(axis=1) * dt


def initial_flat_length(paths: np.ndarray, dt: float) -> np.ndarray:
    """Length of the initial run of exact zeros on each path."""
    nz = paths != 0.0
    first = np.where(nz.any(axis=1), nz.argmax(axis=1), paths.shape[1])
    return np.maximum(first - 1, 0) * dt + np.where(first > 0, 0.5 * dt, 0.0)


def tv_with_atom(a: np.ndarray, b: np.ndarray, edges) -> float:
    """TV distance between two samples, with exact zeros kept as their own cell."""
    edges = np.asarray(edges, dtype=float)

    def masses(v):
        v = np.asarray(v, dtype=float)
        nz = v[v != 0.0]
        idx = np.searchsorted(edges, nz, side="right")
        counts = np.bincount(idx, minlength=edges.size + 1)
        return np.concatenate([[np.sum(v == 0.0)], counts]) / v.size

    return float(0.5 * np.abs(masses(a) - masses(b)).sum())


def chapman_kolmogorov_check(alpha, rate: float, s: float, t: float, dt: float, n_paths: int,
                             rng: RandomSource, edges=None,
                             substeps: int = DEFAULT_SUBSTEPS) -> dict:
    """Law of ``Y_{s+t}`` from 0 against ``Y_t`` restarted from sampled ``Y_s``.

    The restart ensemble uses streams independent of the first one; exact
    zeros (time spent waiting at 0) form their own cell of the TV partition.
    """
    if edges is None:
        edges = np.linspace(-1.5, 1.5, 13)
    g1 = TimeGrid.from_horizon(s + t, dt)
    first = ensemble("delayed", alpha, 0.0, g1, n_paths, rng.child(0), rate, substeps)
    ys = first[:, g1.index_of(s)]
    direct = first[:, -1]
    g2 = TimeGrid.from_horizon(t, dt)
    restarted = ensemble("delayed", alpha, ys, g2, n_paths, rng.child(1), rate, substeps)[:, -1]
    tv = tv_with_atom(direct, restarted, edges)
    return {
        "tv": tv,
        "atom_direct": float(np.mean(direct == 0.0)),
        "atom_restarted": float(np.mean(restarted == 0.0)),
        "atom_at_s": float(np.mean(ys == 0.0)),
        "n_paths": n_paths,
    }
