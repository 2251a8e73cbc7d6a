"""Kernel backend selection.

The hot compositing loops exist twice: numba-jitted (default) and pure
numpy. Set PANOSPLAT_BACKEND=numpy to force the fallback, or =numba to
fail loudly if numba is unavailable. `benchmarks/bench_rasterizer.py`
compares the two.
"""

from __future__ import annotations

import os

_BACKENDS = {}


def get_backend(name: str | None = None):
    """Return the kernel module for `name` (or the environment default)."""
    if name is None:
        name = os.environ.get("PANOSPLAT_BACKEND", "").strip().lower() or "auto"
    if name == "auto":
        try:
            return get_backend("numba")
        except ImportError:
            return get_backend("numpy")
    if name in _BACKENDS:
        return _BACKENDS[name]
    if name == "numba":
        from . import numba_impl as mod
    elif name == "numpy":
        from . import numpy_impl as mod
    else:
        raise ValueError(f"unknown kernel backend {name!r} (use 'numba' or 'numpy')")
    _BACKENDS[name] = mod
    return mod


def active_backend_name() -> str:
    return get_backend().NAME
