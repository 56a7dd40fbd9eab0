"""Kernel dispatch: the compiled extension when importable, else the fallback.

Set ``SLOWFOCUS_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation in use; ``get_impl`` returns either one explicitly (used by the
benchmark and the parity tests).
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("SLOWFOCUS_PURE_PYTHON"):
    _impl: ModuleType = _compiled
    BACKEND = "cython"
else:
    _impl = _kernels_py
    BACKEND = "python"


def compiled_available() -> bool:
    return _compiled is not None


def get_impl(name: str | None = None) -> ModuleType:
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("slowfocus._kernels extension is not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def _c(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    return _impl.matmul(_c(a), _c(b))


def row_softmax(x, scale: float) -> np.ndarray:
    return _impl.row_softmax(_c(x), float(scale))


def attention(q, k, v, scale: float) -> np.ndarray:
    return _impl.attention(_c(q), _c(k), _c(v), float(scale))


def block_mean(x, out_rows: int) -> np.ndarray:
    return _impl.block_mean(_c(x), int(out_rows))


def adjacent_cosine_distance(f) -> np.ndarray:
    return _impl.adjacent_cosine_distance(_c(f))


def lcs_length(a, b) -> int:
    if _impl is _kernels_py:
        return _kernels_py.lcs_length(list(a), list(b))
    return _impl.lcs_length(
        np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64)
    )
