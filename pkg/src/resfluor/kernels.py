"""Hot-loop kernels, compiled when available.

The Cython extension ``resfluor._core`` is used if it imports; otherwise the
numpy/scipy versions in ``resfluor._fallback`` are used. Set
``RESFLUOR_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

_core = None
if os.environ.get("RESFLUOR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:
        _core = None

BACKEND = "compiled" if _core is not None else "python"
_impl = _core if _core is not None else _fallback

integrate_linear = _impl.integrate_linear
pair_histogram = _impl.pair_histogram


def get(backend):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if backend == "python":
        return _fallback
    if backend == "compiled":
        if _core is None:
            raise ImportError("compiled kernels are not built")
        return _core
    raise ValueError(f"unknown backend {backend!r}")
