"""Backend selection for the hot loops.

The compiled Cython module is used when it was built; otherwise the
pure-Python fallback. Set ``JOINTEMBED_PURE_PYTHON=1`` to force the fallback.
"""

import os
from types import SimpleNamespace

import numpy as np

from . import _kernels_py

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _kernels_py}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def _default_name():
    if os.environ.get("JOINTEMBED_PURE_PYTHON", "") not in ("", "0"):
        return "python"
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = _default_name()


def get_backend(name=None):
    """Return a namespace with the three kernels of backend ``name``."""
    name = name or BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable kernel backend {name!r}")
    mod = _BACKENDS[name]
    return SimpleNamespace(
        name=name,
        batch_hard_select=mod.batch_hard_select,
        triplet_all=mod.triplet_all,
        query_metrics=mod.query_metrics,
    )


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def batch_hard_select(dist, labels, backend=None):
    """Hardest positive / nearest negative index per anchor (-1 when absent).

    Ties go to the lowest sample index.
    """
    return get_backend(backend).batch_hard_select(_c64(dist), _i64(labels))


def triplet_all(dist, labels, margin, use_softplus, backend=None):
    """Sum of the surrogate over every valid triplet.

    Returns ``(value, coef, count)`` where ``coef[a, b]`` is the summed
    derivative of the loss w.r.t. ``D(a, b)``.
    """
    return get_backend(backend).triplet_all(
        _c64(dist), _i64(labels), float(margin), bool(use_softplus)
    )


def query_metrics(order, q_ids, q_cams, g_ids, g_cams, backend=None):
    """Per-query AP, first-hit rank (0 if none) and kept-candidate count."""
    return get_backend(backend).query_metrics(
        _i64(order), _i64(q_ids), _i64(q_cams), _i64(g_ids), _i64(g_cams)
    )
