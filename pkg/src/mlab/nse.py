"""Spectral Galerkin stochastic Navier-Stokes on the 3-torus.

Fields are stored as complex coefficients ``u[k]`` in C^3 on the lattice
``0 < |k|_inf <= N``. The lattice is ordered as a half-lattice ``H`` (first
nonzero coordinate positive) followed by its negatives, so mode ``i < H``
has partner ``i + H``. The real inner product is ``<u, v> = sum_k Re(u_k .
conj(v_k))`` over the whole lattice.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .pathcore import (RandomSource, SamplePath, TimeGrid, constant_predictor,
                       martingale_increment_test, trapezoid_cumulative)

SNAPSHOT_MAGIC = b"NSE0"
_HEADER = struct.Struct("<4sIQ")


class NSEError(ValueError):
    pass


class TrajectoryAborted(NSEError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# lattice and fields


class WaveLattice:
    def __init__(self, N: int):
        if int(N) != N or N < 1:
            raise NSEError(f"lattice cutoff must be a positive integer, got {N}")
        self.N = int(N)
        r = np.arange(-self.N, self.N + 1)
        g = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        first = np.array([row[np.flatnonzero(row)[0]] if row.any() else 0 for row in g])
        half = g[first > 0]
        self.half = half
        self.ks = np.concatenate([half, -half]).astype(np.int64)
        self.H = half.shape[0]
        self.M = 2 * self.H
        self.k2 = np.sum(self.ks.astype(float) ** 2, axis=1)
        self._index = {tuple(k): i for i, k in enumerate(self.ks.tolist())}
        e1 = np.empty((self.H, 3))
        e2 = np.empty((self.H, 3))
        for i, k in enumerate(half.astype(float)):
            a = np.array([0.0, 0.0, 1.0]) if abs(k[0]) + abs(k[1]) > 0 else np.array([1.0, 0.0, 0.0])
            v = np.cross(a, k)
            v /= np.linalg.norm(v)
            w = np.cross(k, v)
            w /= np.linalg.norm(w)
            e1[i], e2[i] = v, w
        # the same real basis at k and -k
        self.e1 = np.concatenate([e1, e1])
        self.e2 = np.concatenate([e2, e2])

    def __len__(self) -> int:
        return self.M

    def __eq__(self, other) -> bool:
        return isinstance(other, WaveLattice) and other.N == self.N

    def __hash__(self) -> int:
        return hash(("WaveLattice", self.N))

    def index(self, k) -> int:
        try:
            return self._index[tuple(int(c) for c in k)]
        except KeyError:
            raise NSEError(f"wavevector {tuple(k)} is not on the lattice N={self.N}") from None

    def partner(self, i):
        return np.where(np.asarray(i) < self.H, np.asarray(i) + self.H, np.asarray(i) - self.H)

    @cached_property
    def triads(self):
        """Interactions ``p + q = k`` with ``k`` in the half-lattice, sorted by ``k``."""
        kk, pp, qq = [], [], []
        for i in range(self.H):
            k = self.ks[i]
            for j in range(self.M):
                q = k - self.ks[j]
                if np.max(np.abs(q)) <= self.N and q.any():
                    kk.append(i)
                    pp.append(j)
                    qq.append(self._index[tuple(q.tolist())])
        kk = np.array(kk, dtype=np.int64)
        pp = np.array(pp, dtype=np.int64)
        qq = np.array(qq, dtype=np.int64)
        o = np.argsort(kk, kind="stable")
        kk, pp, qq = kk[o], pp[o], qq[o]
        if np.unique(kk).size != self.H:
            raise NSEError("a half-lattice mode has no interacting pair")
        return kk, pp, qq, self.ks[qq].astype(float)


def _lattice_cache():
    cache: dict[int, WaveLattice] = {}

    def get(N: int) -> WaveLattice:
        if N not in cache:
            cache[N] = WaveLattice(N)
        return cache[N]

    return get


lattice = _lattice_cache()


@dataclass
class SpectralField:
    lat: WaveLattice
    coeffs: np.ndarray  # (M, 3) complex

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.lat.M, 3):
            raise NSEError(f"coefficients must have shape {(self.lat.M, 3)}, got {c.shape}")
        self.coeffs = c

    @classmethod
    def zeros(cls, lat: WaveLattice) -> "SpectralField":
        return cls(lat, np.zeros((lat.M, 3), dtype=complex))

    @classmethod
    def random(cls, lat: WaveLattice, gen: np.random.Generator, scale: float = 1.0,
               decay: float = 0.0) -> "SpectralField":
        """Real divergence-free field with ``|u_k| ~ scale * |k|^-decay``."""
        h = lat.H
        z = gen.standard_normal((h, 2)) + 1j * gen.standard_normal((h, 2))
        amp = scale * lat.k2[:h] ** (-decay / 2)
        c = (z[:, :1] * lat.e1[:h] + z[:, 1:] * lat.e2[:h]) * amp[:, None] / math.sqrt(2)
        return cls(lat, np.concatenate([c, np.conj(c)]))

    @classmethod
    def mode(cls, lat: WaveLattice, k, polarization: int = 0, part: str = "cos",
             amplitude: float = 1.0) -> "SpectralField":
        """Unit-norm real field on the pair ``+-k`` along one basis direction."""
        i = lat.index(k)
        i = i if i < lat.H else i - lat.H
        e = (lat.e1 if polarization == 0 else lat.e2)[i]
        c = np.zeros((lat.M, 3), dtype=complex)
        if part == "cos":
            c[i] = e / math.sqrt(2)
        elif part == "sin":
            c[i] = -1j * e / math.sqrt(2)
        else:
            raise NSEError(f"part must be 'cos' or 'sin', got {part!r}")
        c[i + lat.H] = np.conj(c[i])
        return cls(lat, amplitude * c)

    def copy(self) -> "SpectralField":
        return SpectralField(self.lat, self.coeffs.copy())

    def __add__(self, other):
        return SpectralField(self.lat, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self.lat, self.coeffs - other.coeffs)

    def __mul__(self, a: float):
        return SpectralField(self.lat, self.coeffs * a)

    __rmul__ = __mul__

    def reality_error(self) -> float:
        h = self.lat.H
        return float(np.max(np.abs(self.coeffs[h:] - np.conj(self.coeffs[:h]))))

    def divergence_error(self) -> float:
        return float(np.max(np.abs(np.einsum("kj,kj->k", self.lat.ks, self.coeffs))))


def inner(u, v) -> float | np.ndarray:
    """Real inner product; accepts fields or ``(..., M, 3)`` arrays."""
    a = u.coeffs if isinstance(u, SpectralField) else u
    b = v.coeffs if isinstance(v, SpectralField) else v
    return np.real(np.sum(a * np.conj(b), axis=(-2, -1)))


# ---------------------------------------------------------------------------
# linear operators


def _project_array(lat: WaveLattice, v: np.ndarray) -> np.ndarray:
    ks = lat.ks.astype(float)
    dot = np.einsum("...kj,kj->...k", v, ks)
    return v - dot[..., None] * ks / lat.k2[:, None]


def leray_project(v) -> SpectralField:
    if isinstance(v, SpectralField):
        return SpectralField(v.lat, _project_array(v.lat, v.coeffs))
    raise NSEError("leray_project expects a SpectralField")


def stokes_apply(u: SpectralField, theta: float = 1.0) -> SpectralField:
    return SpectralField(u.lat, u.coeffs * (u.lat.k2 ** theta)[:, None])


def sobolev_theta(alpha0: float) -> float:
    return 0.5 * (alpha0 + 1.0) if alpha0 < 0.5 else alpha0 + 0.25


def _sq_norm_weights(lat: WaveLattice, theta: float) -> np.ndarray:
    return lat.k2 ** (2.0 * theta)


def sobolev_norm(u: SpectralField, alpha0: float) -> float:
    """``|A^theta u|`` with the regularity exponent ``theta(alpha0)``."""
    w = _sq_norm_weights(u.lat, sobolev_theta(alpha0))
    return math.sqrt(float(np.sum(w * np.sum(np.abs(u.coeffs) ** 2, axis=1))))


def v_norm_sq(u) -> float:
    c = u.coeffs
    return float(np.sum(u.lat.k2 * np.sum(np.abs(c) ** 2, axis=1)))


# ---------------------------------------------------------------------------
# nonlinearity


def _nonlinear_array(lat: WaveLattice, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Projected convolution for ensembles ``(n, M, 3)``."""
    kk, pp, qq, qv = lat.triads
    half = kernels.triad_convolution(u, v, kk, pp, qq, qv, lat.H)
    half = _project_array_half(lat, half)
    return np.concatenate([half, np.conj(half)], axis=1)


def _project_array_half(lat, v):
    ks = lat.half.astype(float)
    dot = np.einsum("nkj,kj->nk", v, ks)
    return v - dot[..., None] * ks / lat.k2[: lat.H, None]


def nonlinearity_B(u: SpectralField, v: SpectralField) -> SpectralField:
    """``P sum_{p+q=k} i (u_p . q) v_q`` restricted to the lattice."""
    if u.lat != v.lat:
        raise NSEError("fields live on different lattices")
    out = _nonlinear_array(u.lat, u.coeffs[None], v.coeffs[None])[0]
    return SpectralField(u.lat, out)


class SparseForm:
    """``x -> <B(x, phi), x>`` for a fixed, sparsely supported ``phi``."""

    def __init__(self, phi: SpectralField):
        lat = phi.lat
        self.lat = lat
        supp = np.flatnonzero(np.any(phi.coeffs != 0, axis=1))
        ps, ks, coef = [], [], []
        for qi in supp:
            q = lat.ks[qi]
            for pi in range(lat.M):
                k = lat.ks[pi] + q
                if np.max(np.abs(k)) <= lat.N and k.any():
                    ps.append(pi)
                    ks.append(lat.index(k))
                    coef.append((q.astype(float), phi.coeffs[qi]))
        self.p = np.array(ps, dtype=np.int64)
        self.k = np.array(ks, dtype=np.int64)
        self.q = np.array([c[0] for c in coef]).reshape(-1, 3)
        self.phi_q = np.array([c[1] for c in coef]).reshape(-1, 3)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """``x`` of shape ``(n, M, 3)``; returns ``(n,)``."""
        if self.p.size == 0:
            return np.zeros(x.shape[0])
        dot = np.einsum("ntj,tj->nt", x[:, self.p], self.q)
        w = np.einsum("tj,ntj->nt", self.phi_q, np.conj(x[:, self.k]))
        return np.real(np.sum(1j * dot * w, axis=1))


# ---------------------------------------------------------------------------
# noise, cutoff, parameters


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal covariance ``q_k = scale * |k|^-(3 + 4 alpha0)`` on both
    divergence-free directions of every mode.

    ``mask`` (length ``M``, symmetric in ``+-k``) zeroes chosen modes (test hook).
    """

    alpha0: float
    lat: WaveLattice
    scale: float = 1.0
    mask: tuple | None = None

    def __post_init__(self):
        if not self.alpha0 > 1.0 / 6.0:
            raise NSEError(f"alpha0 must exceed 1/6, got {self.alpha0}")
        if self.scale < 0:
            raise NSEError("noise scale must be nonnegative")

    @cached_property
    def q(self) -> np.ndarray:
        q = self.scale * self.lat.k2 ** (-(3.0 + 4.0 * self.alpha0) / 2.0)
        if self.mask is not None:
            q = q * np.asarray(self.mask, dtype=float)
        return q

    def bounded_inverse_ratio(self) -> np.ndarray:
        """``|k|^(3/2 + 2 alpha0) sqrt(q_k)``; identically 1 for the unscaled spec."""
        return self.lat.k2 ** ((1.5 + 2.0 * self.alpha0) / 2.0) * np.sqrt(self.q)

    @property
    def trace(self) -> float:
        """Truncated trace: two directions per lattice mode."""
        return float(2.0 * self.q.sum())

    def full_trace(self, K: int = 40) -> float:
        """Trace over all of ``Z^3 \\ {0}``: a ball sum plus its radial tail."""
        if self.mask is not None:
            raise NSEError("full trace is defined for the unmasked covariance")
        r = np.arange(-K, K + 1, dtype=float)
        k2 = r[:, None, None] ** 2 + r[None, :, None] ** 2 + r[None, None, :] ** 2
        inside = (k2 > 0) & (k2 <= K * K)
        s = 2.0 * self.scale * np.sum(k2[inside] ** (-(3.0 + 4.0 * self.alpha0) / 2.0))
        # radius whose ball volume matches the number of summed points (plus origin)
        r_eff = (3.0 * (inside.sum() + 1) / (4.0 * math.pi)) ** (1.0 / 3.0)
        tail = 2.0 * self.scale * 4.0 * math.pi * r_eff ** (-4.0 * self.alpha0) / (4.0 * self.alpha0)
        return float(s + tail)

    def q_half_norm_sq(self, phi: SpectralField) -> float:
        """``|Q^(1/2) phi|^2`` for divergence-free ``phi``."""
        return float(np.sum(self.q * np.sum(np.abs(phi.coeffs) ** 2, axis=1)))


def chi(r):
    """Smooth cutoff: 1 on [0, 1], 0 on [2, inf), quintic smoothstep between."""
    s = np.clip(np.asarray(r, dtype=float) - 1.0, 0.0, 1.0)
    out = 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CutoffSpec:
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise NSEError(f"cutoff radius must be positive, got {self.R}")

    def weight(self, w_norm_sq):
        if math.isinf(self.R):
            return np.ones_like(np.asarray(w_norm_sq, dtype=float))
        return chi(np.asarray(w_norm_sq, dtype=float) / self.R)


@dataclass(frozen=True)
class GalerkinParams:
    nu: float
    N: int
    dt: float
    horizon: float
    alpha0: float = 0.25

    def __post_init__(self):
        if not self.nu > 0:
            raise NSEError(f"viscosity must be positive, got {self.nu}")
        if not self.dt > 0 or not self.horizon > 0:
            raise NSEError("dt and horizon must be positive")
        if self.nu * self.N ** 2 * self.dt > 1.0:
            raise NSEError(f"step guard nu*N^2*dt <= 1 violated: {self.nu * self.N ** 2 * self.dt:g}")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_horizon(self.horizon, self.dt)


# ---------------------------------------------------------------------------
# stepping


class Stepper:
    """Exponential-Euler stepping of ensembles ``(n, M, 3)``."""

    def __init__(self, params: GalerkinParams, cutoff: CutoffSpec, noise: NoiseSpec,
                 nonlinear: bool = True):
        self.params = params
        self.lat = noise.lat
        if self.lat.N != params.N:
            raise NSEError("noise lattice and parameters disagree on N")
        self.cutoff = cutoff
        self.noise = noise
        self.nonlinear = nonlinear
        lat, nu, dt = self.lat, params.nu, params.dt
        self.decay = np.exp(-nu * lat.k2 * dt)
        var = np.where(lat.k2 > 0, -np.expm1(-2.0 * nu * lat.k2 * dt) / (2.0 * nu * lat.k2), dt)
        # per real normal: sqrt(q v / 2)
        self.noise_std = np.sqrt(noise.q * var / 2.0)[: lat.H]
        self.w_weights = _sq_norm_weights(lat, sobolev_theta(params.alpha0))

    def w_norm_sq(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("k,nk->n", self.w_weights, np.sum(np.abs(u) ** 2, axis=-1))

    def chi(self, u: np.ndarray) -> np.ndarray:
        return self.cutoff.weight(self.w_norm_sq(u))

    def noise_increment(self, z: np.ndarray) -> np.ndarray:
        """``z`` of shape ``(n, H, 2, 2)``: polarization x (cos, sin) normals."""
        lat = self.lat
        h = lat.H
        a = (z[..., 0] - 1j * z[..., 1]) * self.noise_std[None, :, None]
        half = a[..., 0:1] * lat.e1[None, :h] + a[..., 1:2] * lat.e2[None, :h]
        return np.concatenate([half, np.conj(half)], axis=1)

    def drift_part(self, u: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
        """``e^{-nu A dt} (u - dt chi B(u, u))``."""
        if self.nonlinear:
            w = self.chi(u) if weight is None else weight
            active = w > 0
            v = u.copy()
            if active.any():
                b = _nonlinear_array(self.lat, u[active], u[active])
                v[active] -= self.params.dt * w[active, None, None] * b
        else:
            v = u
        return v * self.decay[None, :, None]

    def step(self, u: np.ndarray, z: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
        return self.drift_part(u, weight) + self.noise_increment(z)


class _Streams:
    """Per-path normal streams read in blocks; draws are independent of the block size."""

    def __init__(self, rngs: Sequence[RandomSource], H: int, n_steps: int, block: int = 32):
        self.gens = [r.generator() for r in rngs]
        self.H = H
        self.n_steps = n_steps
        self.block = block
        self.buf = None
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.buf is None or self.pos == self.buf.shape[1]:
            self.buf = np.stack([g.standard_normal((self.block, self.H, 2, 2)) for g in self.gens])
            self.pos = 0
        z = self.buf[:, self.pos]
        self.pos += 1
        return z


Observer = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class EnsembleRun:
    grid: TimeGrid
    observations: dict
    final: np.ndarray
    aborted: np.ndarray  # step index of abort, -1 if none
    states: np.ndarray | None = None  # (n, nodes, M, 3) when stored

    @property
    def n_paths(self) -> int:
        return self.final.shape[0]


def simulate_ensemble(u0, stepper: Stepper, n_paths: int, rng: RandomSource,
                      observers: dict[str, Observer] | None = None, store_states: bool = False,
                      n_steps: int | None = None) -> EnsembleRun:
    """Run ``n_paths`` trajectories; row ``i`` uses ``rng.child(i)``.

    ``u0`` is a field, an ``(M, 3)`` array or a per-path ``(n, M, 3)`` array.
    Observers map ``(state, chi)`` to one value per path and are recorded at
    every node, so functionals never need stored states.
    """
    lat = stepper.lat
    grid = stepper.params.grid
    if n_steps is not None:
        grid = TimeGrid(0.0, grid.dt, int(n_steps))
    c0 = u0.coeffs if isinstance(u0, SpectralField) else np.asarray(u0, dtype=complex)
    u = np.broadcast_to(c0, (n_paths, lat.M, 3)).copy()
    observers = observers or {}
    obs = {name: np.empty((n_paths, grid.n_steps + 1)) for name in observers}
    states = np.empty((n_paths, grid.n_steps + 1, lat.M, 3), dtype=complex) if store_states else None
    aborted = np.full(n_paths, -1, dtype=np.int64)
    streams = _Streams([rng.child(i) for i in range(n_paths)], lat.H, grid.n_steps)

    def record(k, w):
        for name, f in observers.items():
            obs[name][:, k] = f(u, w)
        if store_states:
            states[:, k] = u

    w = stepper.chi(u)
    record(0, w)
    for k in range(grid.n_steps):
        z = streams.next()
        u = stepper.drift_part(u, w) + stepper.noise_increment(z)
        bad = ~np.all(np.isfinite(u), axis=(1, 2))
        if bad.any():
            fresh = bad & (aborted < 0)
            aborted[fresh] = k + 1
            u[bad] = 0.0
        w = stepper.chi(u)
        record(k + 1, w)
    for name in obs:
        for i in np.flatnonzero(aborted >= 0):
            obs[name][i, aborted[i]:] = np.nan
    return EnsembleRun(grid, obs, u, aborted, states)


def step_cutoff(u: SpectralField, params: GalerkinParams, cutoff: CutoffSpec, noise: NoiseSpec,
                rng: RandomSource | np.random.Generator, nonlinear: bool = True) -> SpectralField:
    """One exponential-Euler step of the cut-off system for a single field."""
    st = Stepper(params, cutoff, noise, nonlinear)
    gen = rng.generator() if isinstance(rng, RandomSource) else rng
    z = gen.standard_normal((1, u.lat.H, 2, 2))
    out = st.step(u.coeffs[None], z)[0]
    if not np.all(np.isfinite(out)):
        raise TrajectoryAborted("non-finite state after one step", 1)
    return SpectralField(u.lat, out)


def simulate_path(u0: SpectralField, params: GalerkinParams, cutoff: CutoffSpec, noise: NoiseSpec,
                  rng: RandomSource, nonlinear: bool = True) -> SamplePath:
    """Single trajectory; node values are the real and imaginary parts of all
    coefficients, flattened. Equals row ``i`` of an ensemble run with ``rng.child(i)``."""
    st = Stepper(params, cutoff, noise, nonlinear)
    lat = u0.lat
    grid = params.grid
    gen = _Streams([rng], lat.H, grid.n_steps)
    u = u0.coeffs[None].copy()
    out = np.empty((grid.n_steps + 1, lat.M, 3), dtype=complex)
    out[0] = u[0]
    for k in range(grid.n_steps):
        u = st.step(u, gen.next())
        if not np.all(np.isfinite(u)):
            raise TrajectoryAborted(f"non-finite state at step {k + 1}", k + 1)
        out[k + 1] = u[0]
    return SamplePath(grid, path_values(out))


def path_values(states: np.ndarray) -> np.ndarray:
    n = states.shape[0]
    return np.concatenate([states.real.reshape(n, -1), states.imag.reshape(n, -1)], axis=1)


def path_states(path: SamplePath, lat: WaveLattice) -> np.ndarray:
    v = path.values
    m = lat.M * 3
    return (v[:, :m] + 1j * v[:, m:]).reshape(-1, lat.M, 3)


# ---------------------------------------------------------------------------
# stopping times and functionals


def stopping_time_tau(states, R: float, alpha0: float, grid: TimeGrid,
                      lat: WaveLattice | None = None):
    """First node time with squared regularity norm ``>= R``; ``None`` if never.

    ``states`` is a state path (``SamplePath`` plus ``lat``) or an array
    ``(nodes, M, 3)``.
    """
    if isinstance(states, SamplePath):
        if lat is None:
            raise NSEError("a lattice is needed to decode a SamplePath")
        states = path_states(states, lat)
    if math.isinf(R):
        return None
    m = states.shape[-2]
    lat = lat or _lattice_for(m)
    w = _sq_norm_weights(lat, sobolev_theta(alpha0))
    norms = np.einsum("k,tk->t", w, np.sum(np.abs(states) ** 2, axis=-1))
    hit = np.flatnonzero(norms >= R)
    return None if hit.size == 0 else float(grid.times[hit[0]])


def _lattice_for(m: int) -> WaveLattice:
    N = int(round(((m + 1) ** (1 / 3) - 1) / 2))
    lat = lattice(N)
    if lat.M != m:
        raise NSEError(f"no lattice has {m} modes")
    return lat


def martingale_observers(phi: SpectralField, stepper: Stepper) -> dict[str, Observer]:
    """Per-node ingredients of ``M^phi``."""
    a_phi = stokes_apply(phi).coeffs
    form = SparseForm(phi)
    return {
        "phi": lambda u, w: inner(u, phi.coeffs),
        "a_phi": lambda u, w: inner(u, a_phi),
        "b_phi": lambda u, w: (w if stepper.nonlinear else 0.0) * form(u),
    }


def energy_observers() -> dict[str, Observer]:
    def v_sq(u, w):
        lat = _lattice_for(u.shape[1])
        return np.einsum("k,nk->n", lat.k2, np.sum(np.abs(u) ** 2, axis=-1))

    return {
        "h_sq": lambda u, w: np.sum(np.abs(u) ** 2, axis=(1, 2)),
        "v_sq": v_sq,
    }


def martingale_M(obs: dict, nu: float, dt: float) -> np.ndarray:
    """``<xi_t - xi_0, phi> + nu int <xi, A phi> - int chi <B(xi, phi), xi>``.

    Accepts per-node observations for one path (1-D) or an ensemble (2-D).
    """
    phi = np.asarray(obs["phi"])
    return (phi - phi[..., :1]
            + nu * trapezoid_cumulative(obs["a_phi"], dt)
            - trapezoid_cumulative(obs["b_phi"], dt))


def martingale_M_path(path: SamplePath, phi: SpectralField, nu: float, lat: WaveLattice,
                      chi_weight: Callable[[np.ndarray], np.ndarray] | None = None) -> SamplePath:
    """``M^phi`` of a stored state path (``chi_weight`` defaults to 1)."""
    states = path_states(path, lat)
    form = SparseForm(phi)
    a_phi = stokes_apply(phi).coeffs
    w = np.ones(states.shape[0]) if chi_weight is None else chi_weight(states)
    obs = {"phi": inner(states, phi.coeffs), "a_phi": inner(states, a_phi),
           "b_phi": w * form(states)}
    return SamplePath(path.grid, martingale_M(obs, nu, path.grid.dt))


def energy_process(obs: dict, n: int, nu: float, trace: float, dt: float) -> np.ndarray:
    """``|xi|^2n + 2 n nu int |xi|^(2n-2) |xi|_V^2 - n (2n-1) trace int |xi|^(2n-2)``."""
    if int(n) != n or n < 1:
        raise NSEError("energy exponent must be a positive integer")
    h = np.asarray(obs["h_sq"])
    v = np.asarray(obs["v_sq"])
    lead = h ** n
    hp = h ** (n - 1)
    return (lead + 2 * n * nu * trapezoid_cumulative(hp * v, dt)
            - n * (2 * n - 1) * trace * trapezoid_cumulative(hp, dt))


# ---------------------------------------------------------------------------
# cylinder functions and the formal generator


@dataclass(frozen=True)
class ModeRef:
    k: tuple
    polarization: int = 0
    part: str = "cos"

    def field(self, lat: WaveLattice) -> SpectralField:
        return SpectralField.mode(lat, self.k, self.polarization, self.part)


@dataclass(frozen=True)
class CylinderProfile:
    name: str
    arity: int
    f: Callable
    grad: Callable
    hess: Callable


CYLINDER_PROFILES: dict[str, CylinderProfile] = {
    "linear": CylinderProfile(
        "linear", 1, lambda y: y[..., 0], lambda y: np.ones_like(y),
        lambda y: np.zeros(y.shape[:-1] + (1, 1)),
    ),
    "quadratic": CylinderProfile(
        "quadratic", 1, lambda y: y[..., 0] ** 2, lambda y: 2 * y,
        lambda y: np.full(y.shape[:-1] + (1, 1), 2.0),
    ),
    "cosine": CylinderProfile(
        "cosine", 1, lambda y: np.cos(y[..., 0]), lambda y: -np.sin(y),
        lambda y: (-np.cos(y[..., 0]))[..., None, None],
    ),
    "product": CylinderProfile(
        "product", 2, lambda y: y[..., 0] * y[..., 1],
        lambda y: y[..., ::-1].copy(),
        lambda y: np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]), y.shape[:-1] + (2, 2)).copy(),
    ),
}


@dataclass
class CylinderFunction:
    """``phi(x) = f(<x, e_1>, ..., <x, e_m>)`` for registered ``f`` and modes."""

    profile: CylinderProfile
    modes: tuple
    lat: WaveLattice

    def __post_init__(self):
        if len(self.modes) != self.profile.arity:
            raise NSEError(f"{self.profile.name} needs {self.profile.arity} modes")
        self.basis = np.stack([m.field(self.lat).coeffs for m in self.modes])

    @classmethod
    def named(cls, name: str, modes, lat: WaveLattice) -> "CylinderFunction":
        try:
            prof = CYLINDER_PROFILES[name]
        except KeyError:
            raise NSEError(f"unknown cylinder profile {name!r}") from None
        return cls(prof, tuple(modes), lat)

    def projections(self, u: np.ndarray) -> np.ndarray:
        """``u`` of shape ``(..., M, 3)`` to ``(..., m)``."""
        return np.stack([inner(u, b) for b in self.basis], axis=-1)

    def __call__(self, u) -> np.ndarray:
        c = u.coeffs if isinstance(u, SpectralField) else u
        return self.profile.f(self.projections(c))


def formal_generator_cylinder(x: SpectralField, phi: CylinderFunction, noise: NoiseSpec, nu: float,
                              cutoff: CutoffSpec | None = None, alpha0: float | None = None,
                              nonlinear: bool = True) -> float:
    """``1/2 Tr[Q D^2 phi] - <nu A x + chi B(x, x), D phi>`` for a cylinder function."""
    y = phi.projections(x.coeffs)
    g = phi.profile.grad(y)
    hmat = phi.profile.hess(y)
    qb = phi.basis * noise.q[None, :, None]
    qij = np.array([[inner(qb[i], phi.basis[j]) for j in range(len(phi.basis))]
                    for i in range(len(phi.basis))])
    second = 0.5 * float(np.sum(qij * hmat))
    drift = nu * stokes_apply(x).coeffs
    if nonlinear:
        w = 1.0
        if cutoff is not None and not math.isinf(cutoff.R):
            a0 = noise.alpha0 if alpha0 is None else alpha0
            w = float(cutoff.weight(sobolev_norm(x, a0) ** 2))
        drift = drift + w * nonlinearity_B(x, x).coeffs
    first = float(sum(g[i] * inner(drift, phi.basis[i]) for i in range(len(phi.basis))))
    return second - first


# ---------------------------------------------------------------------------
# snapshots


def write_snapshot(fp, u: SpectralField) -> None:
    """16-byte header (magic, N, coefficient count) then float64 re/im pairs."""
    flat = u.coeffs.reshape(-1)
    fp.write(_HEADER.pack(SNAPSHOT_MAGIC, u.lat.N, flat.size))
    data = np.empty(2 * flat.size, dtype="<f8")
    data[0::2] = flat.real
    data[1::2] = flat.imag
    fp.write(data.tobytes())


def read_snapshot(fp) -> SpectralField:
    head = fp.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise NSEError("snapshot header is truncated")
    magic, N, count = _HEADER.unpack(head)
    if magic != SNAPSHOT_MAGIC:
        raise NSEError(f"bad snapshot magic {magic!r}")
    lat = lattice(int(N))
    if count != lat.M * 3:
        raise NSEError(f"snapshot holds {count} coefficients, lattice N={N} needs {lat.M * 3}")
    raw = fp.read(16 * count)
    if len(raw) != 16 * count:
        raise NSEError("snapshot payload is truncated")
    data = np.frombuffer(raw, dtype="<f8")
    return SpectralField(lat, (data[0::2] + 1j * data[1::2]).reshape(lat.M, 3))


def snapshot_bytes(u: SpectralField) -> bytes:
    buf = io.BytesIO()
    write_snapshot(buf, u)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# martingale and energy checks on one ensemble


MARTINGALE_PAIRS = ((0.1, 0.3), (0.25, 0.5), (0.05, 0.45))


def _state_predictors(p: np.ndarray, k: int) -> np.ndarray:
    return np.column_stack([np.ones(p.shape[0]), p[:, k, 0], p[:, k, 1]])


def martingale_energy_check(u0, stepper: Stepper, phi: SpectralField, n_paths: int,
                            rng: RandomSource, pairs=MARTINGALE_PAIRS, full_trace_K: int = 40) -> dict:
    """Increment tests of ``M^phi`` and of ``E^1`` with both trace constants.

    ``M^phi`` increments are regressed on ``[1, <xi_s, phi>, |xi_s|^2]``.
    Energy increments are tested through their ensemble mean: two-sided with
    the truncated trace (a martingale of the Galerkin system), one-sided with
    the full trace (a supermartingale).
    """
    obs = {**martingale_observers(phi, stepper), **energy_observers()}
    run = simulate_ensemble(u0, stepper, n_paths, rng, obs)
    aborted = int(np.sum(run.aborted >= 0))
    if aborted:
        raise TrajectoryAborted(f"{aborted} trajectories aborted", int(run.aborted.max()))
    o, grid = run.observations, run.grid
    nu = stepper.params.nu
    state = np.stack([o["phi"], o["h_sq"]], axis=-1)
    names = ["intercept", "phi_s", "energy_s"]
    M = martingale_M(o, nu, grid.dt)
    qv = grid.horizon * stepper.noise.q_half_norm_sq(phi)
    mart = martingale_increment_test(state, M, grid, pairs, _state_predictors, names, theoretical_qv=qv)
    trunc = stepper.noise.trace
    full = stepper.noise.full_trace(full_trace_K)
    e_trunc = martingale_increment_test(state, energy_process(o, 1, nu, trunc, grid.dt), grid, pairs,
                                        constant_predictor, ["mean"])
    e_full = martingale_increment_test(state, energy_process(o, 1, nu, full, grid.dt), grid, pairs,
                                       constant_predictor, ["mean"])
    return {"martingale": mart, "energy_truncated": e_trunc, "energy_full": e_full,
            "trace_truncated": trunc, "trace_full": full, "n_paths": n_paths, "grid": grid}
