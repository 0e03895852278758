"""Shared numerical substrate: time grids, sample paths, random streams,
quadrature, inversion of increasing paths, histogram distances and the
regression-based martingale test.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class PathError(ValueError):
    """Invalid grid, path or ensemble input."""


class QuadratureError(PathError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class NotMonotoneError(PathError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class DegeneratePredictorError(PathError):
    def __init__(self, message: str, pair: tuple[float, float], rank: int):
        super().__init__(message)
        self.pair = pair
        self.rank = rank


# ---------------------------------------------------------------------------
# grids and paths


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise PathError(f"dt must be positive and finite, got {self.dt}")
        if not (math.isfinite(self.t0) and self.t0 >= 0):
            raise PathError(f"t0 must be nonnegative and finite, got {self.t0}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise PathError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not math.isfinite(self.t0 + self.dt * self.n_steps):
            raise PathError("grid end time overflows")

    @classmethod
    def from_horizon(cls, horizon: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        if horizon <= 0:
            raise PathError(f"horizon must be positive, got {horizon}")
        return cls(t0, dt, max(1, int(round(horizon / dt))))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @property
    def horizon(self) -> float:
        return self.t0 + self.dt * self.n_steps

    def index_of(self, t: float) -> int:
        """Node index nearest to time ``t``."""
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.n_steps:
            raise PathError(f"time {t} outside grid [{self.t0}, {self.horizon}]")
        return k


@dataclass(frozen=True)
class SamplePath:
    """Values of a (possibly vector-valued) process at the nodes of a grid.

    ``values`` has shape ``(n_steps + 1, d)``. A stopped path keeps its
    values and records ``stop_index``; ``flags`` carries free-form markers
    such as ``"truncated_delay"``.
    """

    grid: TimeGrid
    values: np.ndarray
    stop_index: int | None = None
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n_steps + 1:
            raise PathError(
                f"values must have {self.grid.n_steps + 1} rows, got shape {v.shape}"
            )
        if self.stop_index is None and not np.all(np.isfinite(v)):
            bad = int(np.argmax(~np.all(np.isfinite(v), axis=1)))
            raise PathError(f"non-finite value at node {bad} of an unstopped path")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def scalar(self) -> np.ndarray:
        if self.dim != 1:
            raise PathError("path is not scalar")
        return self.values[:, 0]

    def at(self, t: float) -> np.ndarray:
        return self.values[self.grid.index_of(t)]


# ---------------------------------------------------------------------------
# random streams


@dataclass(frozen=True)
class RandomSource:
    """Splittable random stream keyed by ``(seed, stream_id)``.

    Children are derived through ``numpy.random.SeedSequence`` spawn keys, so
    trajectory ``i`` of an ensemble draws the same numbers whether it is
    simulated alone or together with the others.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not (0 <= v < 2**64):
                raise PathError(f"{name} must be a 64-bit nonnegative integer, got {v}")

    def _sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence()))

    def child(self, index: int) -> "RandomSource":
        """Independent sub-stream; used as the per-trajectory stream."""
        # fold the parent stream id into the child id so (s, i) trees do not collide
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.stream_id), int(index))
        )
        sid = int(ss.generate_state(2, np.uint64)[0])
        return RandomSource(self.seed, sid)

    def children(self, n: int) -> list["RandomSource"]:
        return [self.child(i) for i in range(n)]


def ensemble_normals(rng: RandomSource, n_paths: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals of shape ``(n_paths, *shape)``, one child stream per row."""
    out = np.empty((n_paths, *shape))
    for i in range(n_paths):
        out[i] = rng.child(i).generator().standard_normal(shape)
    return out


# ---------------------------------------------------------------------------
# Brownian motion


def simulate_brownian(grid: TimeGrid, dim: int, rng: RandomSource) -> SamplePath:
    if dim < 1:
        raise PathError(f"dim must be positive, got {dim}")
    z = rng.generator().standard_normal((grid.n_steps, dim))
    w = np.zeros((grid.n_steps + 1, dim))
    np.cumsum(z * math.sqrt(grid.dt), axis=0, out=w[1:])
    return SamplePath(grid, w)


def brownian_ensemble(grid: TimeGrid, n_paths: int, rng: RandomSource) -> np.ndarray:
    """Scalar Brownian paths, shape ``(n_paths, n_steps + 1)``; row ``i`` equals
    ``simulate_brownian(grid, 1, rng.child(i))``."""
    w = np.zeros((n_paths, grid.n_steps + 1))
    for i in range(n_paths):
        z = rng.child(i).generator().standard_normal((grid.n_steps, 1))[:, 0]
        np.cumsum(z * math.sqrt(grid.dt), out=w[i, 1:])
    return w


# ---------------------------------------------------------------------------
# quadrature and inversion


def trapezoid_cumulative(y: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid along the last axis, starting at 0."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    np.cumsum(0.5 * dt * (y[..., 1:] + y[..., :-1]), axis=-1, out=out[..., 1:])
    return out


def path_quadrature(path: SamplePath, integrand: Callable[[np.ndarray], np.ndarray]) -> float:
    """Trapezoidal approximation of the time integral of ``integrand(path)``.

    ``integrand`` receives the node values (scalar paths as a 1-D array,
    vector paths as ``(n, d)``) and returns one value per node.
    """
    x = path.scalar if path.dim == 1 else path.values
    y = np.asarray(integrand(x), dtype=float).reshape(-1)
    if y.shape[0] != path.grid.n_steps + 1:
        raise QuadratureError("integrand must return one value per node")
    bad = ~np.isfinite(y)
    if bad.any():
        k = int(np.argmax(bad))
        raise QuadratureError(f"non-finite integrand value at node {k}", index=k)
    return float(np.trapezoid(y, dx=path.grid.dt))


def invert_increasing(path: SamplePath, n_steps: int | None = None) -> SamplePath:
    """Generalized inverse of a strictly increasing scalar path.

    The result lives on a uniform grid of the range ``[S_0, S_n]`` with
    ``n_steps`` cells (default: as many as the input) and is obtained by
    linear interpolation of the graph.
    """
    s = path.scalar
    d = np.diff(s)
    if not np.all(d > 0):
        k = int(np.argmax(~(d > 0)))
        raise NotMonotoneError(f"path not strictly increasing at node {k + 1}", k + 1)
    n = path.grid.n_steps if n_steps is None else int(n_steps)
    if s[0] < 0:
        raise NotMonotoneError("inverse needs a nonnegative range start", 0)
    grid = TimeGrid(float(s[0]), float((s[-1] - s[0]) / n), n)
    r = grid.times
    r[-1] = s[-1]
    return SamplePath(grid, np.interp(r, s, path.times))


# ---------------------------------------------------------------------------
# empirical laws


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray  # len(edges) - 1 interior bins
    underflow: int = 0
    overflow: int = 0

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def probabilities(self) -> np.ndarray:
        """Bin masses including the two outer bins: [under, interior..., over]."""
        full = np.concatenate([[self.underflow], self.counts, [self.overflow]])
        return full / max(self.total, 1)


class EmpiricalLaw:
    """Multiset of real samples, optionally with a separately tracked atom."""

    def __init__(self, samples, atom_mass: float | None = None, atom_at: float = 0.0,
                 atom_std_error: float | None = None):
        self.samples = np.asarray(samples, dtype=float).reshape(len(samples), -1) \
            if len(samples) else np.empty((0, 1))
        self.atom_mass = atom_mass
        self.atom_at = atom_at
        self.atom_std_error = atom_std_error

    def __len__(self) -> int:
        return self.samples.shape[0]

    def histogram(self, edges) -> Histogram:
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
            raise PathError("bin edges must be strictly increasing")
        x = self.samples[:, 0]
        idx = np.searchsorted(edges, x, side="right") - 1
        # right edge is closed for the last interior bin
        idx[x == edges[-1]] = edges.size - 2
        under = int(np.sum(idx < 0))
        over = int(np.sum(idx >= edges.size - 1))
        inside = idx[(idx >= 0) & (idx < edges.size - 1)]
        counts = np.bincount(inside, minlength=edges.size - 1)
        return Histogram(edges, counts, under, over)


def tv_distance(a, b, edges) -> float:
    """Half the L1 distance between binned masses on shared ``edges``.

    Accepts ``EmpiricalLaw`` or ``Histogram`` arguments; histograms must
    carry exactly these edges.
    """
    edges = np.asarray(edges, dtype=float)
    ha = a.histogram(edges) if isinstance(a, EmpiricalLaw) else a
    hb = b.histogram(edges) if isinstance(b, EmpiricalLaw) else b
    for h in (ha, hb):
        if h.edges.shape != edges.shape or not np.array_equal(h.edges, edges):
            raise PathError("histograms are binned on different edges")
    p, q = ha.probabilities(), hb.probabilities()
    return float(min(1.0, 0.5 * np.abs(p - q).sum()))


# ---------------------------------------------------------------------------
# martingale tests


@dataclass
class MartingaleReport:
    """Regression statistics for increments ``M_t - M_s`` on prefix predictors.

    ``z_scores[i, j]`` belongs to pair ``pairs[i]`` and predictor ``j``.
    """

    pairs: list[tuple[float, float]]
    predictor_names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    z_scores: np.ndarray
    n_samples: int
    qv_ratio: float | None = None
    qv_ratio_std_error: float | None = None

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))

    @property
    def max_one_sided_z(self) -> float:
        """Largest evidence of a negative conditional drift (submartingale violation)."""
        return float(np.max(-self.z_scores))

    def passes(self, threshold: float = 3.0) -> bool:
        return self.max_abs_z <= threshold

    def passes_one_sided(self, threshold: float = 3.0) -> bool:
        return self.max_one_sided_z <= threshold

    def qv_within(self, tol: float) -> bool:
        return self.qv_ratio is not None and abs(self.qv_ratio - 1.0) <= tol

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "predictors": list(self.predictor_names),
            "coefficients": self.coefficients.tolist(),
            "std_errors": self.std_errors.tolist(),
            "z_scores": self.z_scores.tolist(),
            "max_abs_z": self.max_abs_z,
            "max_one_sided_z": self.max_one_sided_z,
            "n_samples": self.n_samples,
            "qv_ratio": self.qv_ratio,
            "qv_ratio_std_error": self.qv_ratio_std_error,
        }


Predictor = Callable[[np.ndarray, int], np.ndarray]


def affine_predictors(paths: np.ndarray, k: int) -> np.ndarray:
    """``[1, X_s]`` from the state at node ``k`` (scalar ensembles)."""
    return np.column_stack([np.ones(paths.shape[0]), paths[:, k]])


def constant_predictor(paths: np.ndarray, k: int) -> np.ndarray:
    return np.ones((paths.shape[0], 1))


def quantile_bin_predictors(n_bins: int) -> Predictor:
    """One-hot indicators of the quantile bin of ``X_s``; coefficients are
    conditional mean increments per bin (no intercept)."""

    def build(paths: np.ndarray, k: int) -> np.ndarray:
        x = paths[:, k]
        qs = np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1])
        idx = np.searchsorted(qs, x, side="right")
        out = np.zeros((x.size, n_bins))
        out[np.arange(x.size), idx] = 1.0
        # collapse empty bins (ties, e.g. an atom) into their neighbours
        return out[:, out.sum(axis=0) > 0]

    return build


def _ols_hc0(X: np.ndarray, y: np.ndarray):
    xtx = X.T @ X
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    inv = np.linalg.inv(xtx)
    meat = (X * resid[:, None] ** 2).T @ X
    cov = inv @ meat @ inv
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    return beta, se


def martingale_increment_test(
    paths: np.ndarray,
    functional: np.ndarray,
    grid: TimeGrid,
    pairs: Sequence[tuple[float, float]],
    predictors: Predictor = affine_predictors,
    predictor_names: Sequence[str] | None = None,
    theoretical_qv: float | np.ndarray | None = None,
    min_ensemble: int = 1000,
) -> MartingaleReport:
    """Necessary-condition martingale test on an ensemble.

    ``paths`` are the state paths used to build predictors (shape
    ``(n, n_nodes)`` or ``(n, n_nodes, d)``), ``functional`` the candidate
    martingale at every node, shape ``(n, n_nodes)``. For each ``(s, t)`` the
    increments are regressed on ``predictors(paths, k_s)`` with
    heteroskedasticity-robust standard errors. ``theoretical_qv`` is the
    expected quadratic variation over the whole grid (scalar or per path).
    """
    functional = np.asarray(functional, dtype=float)
    n = functional.shape[0]
    if n < min_ensemble:
        raise PathError(f"ensemble of {n} paths is below the minimum {min_ensemble}")
    coefs, ses, zs = [], [], []
    for s, t in pairs:
        ks, kt = grid.index_of(s), grid.index_of(t)
        if not ks < kt:
            raise PathError(f"need s < t, got ({s}, {t})")
        X = np.asarray(predictors(paths, ks), dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        rank = np.linalg.matrix_rank(X)
        if rank < X.shape[1]:
            raise DegeneratePredictorError(
                f"predictor matrix at s={s} has rank {rank} < {X.shape[1]}", (s, t), rank
            )
        y = functional[:, kt] - functional[:, ks]
        beta, se = _ols_hc0(X, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.sign(beta) * np.inf))
        coefs.append(beta)
        ses.append(se)
        zs.append(z)
    width = max(len(c) for c in coefs)

    def pad(rows):
        return np.array([np.pad(r, (0, width - len(r)), constant_values=0.0) for r in rows])

    qv_ratio = qv_se = None
    if theoretical_qv is not None:
        realized = np.sum(np.diff(functional, axis=1) ** 2, axis=1)
        theo = np.broadcast_to(np.asarray(theoretical_qv, dtype=float), realized.shape)
        denom = theo.mean()
        qv_ratio = float(realized.mean() / denom)
        # delta-method error of a ratio of means
        d = realized / denom - qv_ratio * theo / denom
        qv_se = float(d.std(ddof=1) / math.sqrt(n))
    if predictor_names is None:
        predictor_names = [f"b{j}" for j in range(width)]
    return MartingaleReport(
        pairs=[(float(s), float(t)) for s, t in pairs],
        predictor_names=list(predictor_names),
        coefficients=pad(coefs),
        std_errors=pad(ses),
        z_scores=pad(zs),
        n_samples=n,
        qv_ratio=qv_ratio,
        qv_ratio_std_error=qv_se,
    )


# ---------------------------------------------------------------------------
# summaries and dumps


@dataclass(frozen=True)
class Summary:
    statistic: str
    value: float
    std_error: float
    n_samples: int
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "value": float(self.value),
            "std_error": float(self.std_error),
            "n_samples": int(self.n_samples),
            "seed": self.seed,
        }


def mean_summary(statistic: str, samples, seed: int | None = None) -> Summary:
    x = np.asarray(samples, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return Summary(statistic, float(x.mean()), se, int(x.size), seed)


def write_path_csv(path: SamplePath, fp) -> None:
    """CSV dump: header ``t,x0,...``, one row per node, 17 significant digits."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["t"] + [f"x{j}" for j in range(path.dim)])
    for t, row in zip(path.times, path.values):
        w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_path_csv(fp) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.reader(fp))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:]


def dumps_summaries(summaries: Sequence[Summary]) -> str:
    return json.dumps([s.to_dict() for s in summaries], sort_keys=True, indent=2)
