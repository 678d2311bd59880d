"""Kernel backend selection.

The hot loops (im2col/col2im, 2x2 pooling scatter/gather, mean-shift
iterations) exist twice: numba-compiled and pure numpy. The choice is read
once from ``PRESSTYLE_BACKEND`` (``numba`` or ``numpy``); numba is used when
it imports, numpy otherwise. ``use()`` switches at runtime, mainly for tests
and the benchmark.
"""
import contextlib
import logging
import os

from . import _np_kernels

log = logging.getLogger(__name__)

_NAMES = ("im2col", "col2im", "maxpool2x2", "unpool_scatter", "unpool_gather", "mean_shift_step")

try:
    from . import _nb_kernels

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _nb_kernels = None
    HAS_NUMBA = False


class _Kernels:
    name = None


K = _Kernels()


def available():
    return ("numba", "numpy") if HAS_NUMBA else ("numpy",)


def use(name):
    """Route all kernels through backend ``name``."""
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        log.warning("numba unavailable; falling back to numpy kernels")
        name = "numpy"
    mod = _nb_kernels if name == "numba" else _np_kernels
    for fn in _NAMES:
        setattr(K, fn, getattr(mod, fn))
    K.name = name
    return name


@contextlib.contextmanager
def using(name):
    prev = K.name
    use(name)
    try:
        yield K
    finally:
        use(prev)


def current():
    return K.name


def set_threads(n):
    """Limit numba and BLAS thread pools; ``n == 1`` is the deterministic mode."""
    if HAS_NUMBA:
        _nb_kernels.set_threads(n)
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(int(n))
    except ImportError:  # pragma: no cover
        pass


use(os.environ.get("PRESSTYLE_BACKEND", "numba" if HAS_NUMBA else "numpy").strip().lower() or "numba")
