"""Pure-Python/numpy versions of the hot loops.

Every function here has a twin in the compiled ``_kernels`` extension with
the same signature and results equal to rounding.
"""
from __future__ import annotations

import numpy as np


def damped_em(x0, dw, dt, alpha, threshold, sigma_scale):
    """Euler-Maruyama paths of ``dX = -X dt + s * sigma_alpha(X) dW``.

    ``dw`` holds the Brownian increments, shape ``(n_paths, n_steps)``. A
    path is frozen at 0 from the first node with ``|X| < threshold`` when
    ``threshold > 0``.
    """
    x0 = np.asarray(x0, dtype=float)
    dw = np.asarray(dw, dtype=float)
    n, m = dw.shape
    out = np.empty((n, m + 1))
    x = x0.copy()
    if threshold > 0:
        x[np.abs(x) < threshold] = 0.0
    frozen = (x == 0.0) if threshold > 0 else np.zeros(n, dtype=bool)
    out[:, 0] = x
    for k in range(m):
        p = np.abs(x) ** alpha
        x = x - x * dt + sigma_scale * (p / (1.0 + p)) * dw[:, k]
        if threshold > 0:
            frozen |= np.abs(x) < threshold
            x[frozen] = 0.0
        out[:, k + 1] = x
    return out


def triad_convolution(u, v, kk, pp, qq, qvec, n_half, chunk=64):
    """Unprojected ``sum_{p+q=k} i (u_p . q) v_q`` for half-lattice ``k``.

    ``u`` and ``v`` have shape ``(n, M, 3)``; triads are sorted by ``kk`` and
    every half-lattice mode occurs. Returns ``(n, n_half, 3)``.
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    n = u.shape[0]
    out = np.zeros((n, n_half, 3), dtype=complex)
    starts = np.flatnonzero(np.r_[True, kk[1:] != kk[:-1]])
    kidx = kk[starts]
    for a in range(0, n, chunk):
        b = min(n, a + chunk)
        dot = np.einsum("ntj,tj->nt", u[a:b, pp], qvec)
        term = (1j * dot)[..., None] * v[a:b, qq]
        out[a:b, kidx] = np.add.reduceat(term, starts, axis=1)
    return out
