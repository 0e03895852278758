import os
import subprocess
import sys

import numpy as np
import pytest

from mlab import _fallback, kernels
from mlab.nse import lattice

try:
    from mlab import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_compiled = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def _backend(env_value):
    env = dict(os.environ)
    env.pop("MLAB_PURE_PYTHON", None)
    if env_value is not None:
        env["MLAB_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from mlab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_pure_python_switch():
    assert _backend("1") == "python"


@needs_compiled
def test_compiled_is_the_default():
    assert _backend(None) == "compiled"
    assert kernels.BACKEND == ("python" if os.environ.get("MLAB_PURE_PYTHON") else "compiled")


@needs_compiled
@pytest.mark.parametrize("threshold", [-1.0, 0.05])
def test_damped_em_backends_agree(threshold):
    gen = np.random.default_rng(1)
    x0 = gen.uniform(-1, 1, 20)
    x0[3] = 0.0
    dw = gen.standard_normal((20, 500)) * 0.1
    a = _fallback.damped_em(x0, dw, 0.01, 0.25, threshold, 1.0)
    b = _kernels.damped_em(x0, dw, 0.01, 0.25, threshold, 1.0)
    assert np.allclose(a, b, rtol=0, atol=1e-13)
    if threshold > 0:
        assert np.all(b[3] == 0.0)


@needs_compiled
@pytest.mark.parametrize("N", [1, 2, 3])
def test_triad_convolution_backends_agree(N):
    lat = lattice(N)
    kk, pp, qq, qv = lat.triads
    gen = np.random.default_rng(N)
    u = gen.standard_normal((5, lat.M, 3)) + 1j * gen.standard_normal((5, lat.M, 3))
    v = gen.standard_normal((5, lat.M, 3)) + 1j * gen.standard_normal((5, lat.M, 3))
    a = _fallback.triad_convolution(u, v, kk, pp, qq, qv, lat.H)
    b = _kernels.triad_convolution(u, v, kk, pp, qq, qv, lat.H)
    assert np.allclose(a, b, rtol=0, atol=1e-11)


def test_triad_convolution_by_brute_force():
    lat = lattice(1)
    gen = np.random.default_rng(0)
    u = gen.standard_normal((1, lat.M, 3)) + 1j * gen.standard_normal((1, lat.M, 3))
    v = gen.standard_normal((1, lat.M, 3)) + 1j * gen.standard_normal((1, lat.M, 3))
    kk, pp, qq, qv = lat.triads
    out = kernels.triad_convolution(u, v, kk, pp, qq, qv, lat.H)[0]
    for i in range(lat.H):
        acc = np.zeros(3, dtype=complex)
        for p in range(lat.M):
            q = lat.ks[i] - lat.ks[p]
            if np.max(np.abs(q)) <= 1 and q.any():
                acc += 1j * np.dot(u[0, p], q) * v[0, lat.index(q)]
        assert np.allclose(out[i], acc, atol=1e-12)
