"""Kernel dispatch: the compiled extension when importable, else pure Python.

Set ``WINLAB_PURE_PYTHON=1`` before import to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("WINLAB_PURE_PYTHON"):
    try:
        from . import _ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def count_violations(loss, win, kl, tol: float = 1e-12, impl=None):
    impl = impl or _impl
    return impl.count_violations(
        np.ascontiguousarray(loss, dtype=np.float64),
        np.ascontiguousarray(win, dtype=np.float64),
        np.ascontiguousarray(kl, dtype=np.float64),
        float(tol),
    )


def fictitious_play(H, P, sizes, qprobs, max_iters: int, tol: float, impl=None):
    impl = impl or _impl
    return impl.fictitious_play(
        np.ascontiguousarray(H, dtype=np.float64),
        np.ascontiguousarray(P, dtype=np.float64),
        np.ascontiguousarray(sizes, dtype=np.int_),
        np.ascontiguousarray(qprobs, dtype=np.float64),
        int(max_iters),
        float(tol),
    )


def implementations() -> dict:
    """Every available backend, keyed by name (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _ext

        out["cython"] = _ext
    except ImportError:
        pass
    return out
