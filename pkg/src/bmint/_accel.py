"""Backend selection for the hot kernels.

Kernels are written twice: a numba ``@njit`` version and a vectorised numpy
version.  ``BMINT_DISABLE_NUMBA=1`` forces the numpy path globally; most
public entry points also take ``backend="numba" | "numpy"`` explicitly.
"""
from __future__ import annotations

import os

try:
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

ENV_FLAG = "BMINT_DISABLE_NUMBA"

HAVE_NUMBA = _numba is not None

if HAVE_NUMBA and "NUMBA_THREADING_LAYER" not in os.environ:
    # the bundled TBB is too old and numba warns on every parallel launch
    _numba.config.THREADING_LAYER = "workqueue"


def _disabled() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() not in ("", "0", "false", "no")


def default_backend() -> str:
    if HAVE_NUMBA and not _disabled():
        return "numba"
    return "numpy"


def resolve(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op when numba is missing."""
    if _numba is None:  # pragma: no cover
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def set_workers(n: int | None) -> None:
    """Set numba's thread count; results never depend on it."""
    if n is None or _numba is None:
        return
    n = max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS))
    _numba.set_num_threads(n)
