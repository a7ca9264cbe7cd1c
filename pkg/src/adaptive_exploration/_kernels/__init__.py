"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``AE_PURE_PYTHON=1`` to
force the fallback. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _pykernels

_c = None
if os.environ.get("AE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c
    except ImportError:
        _c = None

BACKEND = "cython" if _c is not None else "python"
BACKENDS = {"python": _pykernels}
if _c is not None:
    BACKENDS["cython"] = _c

_impl = _c if _c is not None else _pykernels


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def threshold_select(sims, lam, impl=None):
    return (impl or _impl).threshold_select(_f64(sims), float(lam))


def topk_select(sims, k, impl=None):
    return (impl or _impl).topk_select(_f64(sims), int(k))


def sparse_xent(logits, indptr, indices, weights, impl=None):
    return (impl or _impl).sparse_xent(_f64(logits), _i64(indptr), _i64(indices), _f64(weights))


def rank_scan(order, q_ids, q_cams, g_ids, g_cams, cross_camera, impl=None):
    return (impl or _impl).rank_scan(
        _i64(order), _i64(q_ids), _i64(q_cams), _i64(g_ids), _i64(g_cams), bool(cross_camera)
    )
