"""Hot-loop selector: the compiled extension when importable, numpy otherwise.

Set ``MLAB_PURE_PYTHON=1`` to force the numpy versions.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("MLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback

damped_em = _impl.damped_em
triad_convolution = _impl.triad_convolution
