"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``STEGALYZE_KERNELS``
(``numba`` or ``numpy``). Without the variable the numpy kernels run: the
recurrence is dominated by exp/tanh, which numpy evaluates with SIMD loops
while numba (without SVML) calls scalar libm, so numpy trains faster on
typical machines. ``benchmarks/bench_kernels.py`` measures both. Both
implementations stay importable so they can be compared.
"""
import logging
import os

import numpy as np

from . import numpy_impl

log = logging.getLogger(__name__)

try:
    from . import numba_impl

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - depends on the environment
    numba_impl = None
    HAS_NUMBA = False

_requested = os.environ.get("STEGALYZE_KERNELS", "numpy").lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"STEGALYZE_KERNELS must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAS_NUMBA:
    log.warning("numba requested but unavailable; using numpy kernels")
    _requested = "numpy"

BACKEND = _requested


def get_backend(name=None):
    """Module implementing the kernels for ``name`` (default: active backend)."""
    name = name or BACKEND
    if name == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("numba backend is not available")
        return _NumbaAdapter
    return numpy_impl


class _NumbaAdapter:
    """Makes inputs contiguous and mask dtypes consistent before jitted calls."""

    @staticmethod
    def lstm_forward(x, W, b, mask):
        x = np.ascontiguousarray(x)
        return numba_impl.lstm_forward(
            x, np.ascontiguousarray(W), np.ascontiguousarray(b), np.ascontiguousarray(mask, dtype=x.dtype)
        )

    @staticmethod
    def lstm_backward(dH, x, W, mask, C, G, Hraw):
        x = np.ascontiguousarray(x)
        return numba_impl.lstm_backward(
            np.ascontiguousarray(dH, dtype=x.dtype),
            x,
            np.ascontiguousarray(W),
            np.ascontiguousarray(mask, dtype=x.dtype),
            C,
            G,
            Hraw,
        )

    @staticmethod
    def unfold(x, width):
        return numba_impl.unfold(np.ascontiguousarray(x), int(width))

    @staticmethod
    def fold(g, width, T):
        return numba_impl.fold(np.ascontiguousarray(g), int(width), int(T))

    @staticmethod
    def scatter_add_rows(n_rows, ids, values):
        return numba_impl.scatter_add_rows(
            int(n_rows), np.ascontiguousarray(ids, dtype=np.int64), np.ascontiguousarray(values)
        )


_active = get_backend()


def lstm_forward(x, W, b, mask):
    return _active.lstm_forward(x, W, b, mask)


def lstm_backward(dH, x, W, mask, C, G, Hraw):
    return _active.lstm_backward(dH, x, W, mask, C, G, Hraw)


def unfold(x, width):
    return _active.unfold(x, width)


def fold(g, width, T):
    return _active.fold(g, width, T)


def scatter_add_rows(n_rows, ids, values):
    return _active.scatter_add_rows(n_rows, ids, values)
