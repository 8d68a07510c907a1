"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``TRAFFICAST_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("TRAFFICAST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv_time_forward(x, w, b):
    """Pre-activation time convolution, see :mod:`trafficast._pykernels`."""
    return _impl.conv_time_forward(_c(x), _c(w), _c(b))


def conv_time_backward(x, w, dz):
    return _impl.conv_time_backward(_c(x), _c(w), _c(dz))


def graph_conv_forward(s, nbr, w, b):
    """Time convolution of each link's neighbour-gathered rows of ``s`` (B, N, T)."""
    return _impl.graph_conv_forward(_c(s), np.ascontiguousarray(nbr, dtype=np.int64), _c(w), _c(b))


def graph_conv_backward(s, nbr, w, dz):
    return _impl.graph_conv_backward(_c(s), np.ascontiguousarray(nbr, dtype=np.int64), _c(w), _c(dz))


def best_split(xs, ys, min_leaf: int):
    return _impl.best_split(_c(xs), _c(ys), int(min_leaf))


def backends() -> dict:
    """Every importable backend module keyed by name (for tests and benchmarks)."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
