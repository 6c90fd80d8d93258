"""Kernel dispatch: compiled Cython core when importable, numpy otherwise.

Set ``GROUNDNET_PURE_PYTHON=1`` before import to force the numpy path.
"""
import os

import numpy as np

from groundnet import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GROUNDNET_PURE_PYTHON") != "1":
    try:
        from groundnet import _ckernels as _impl  # noqa: F811
    except ImportError:
        _impl = _pykernels
    else:
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def relation_forward(theta, x, a1, a2, impl=None):
    impl = impl or _impl
    return impl.relation_forward(_c(theta), _c(x), int(a1), int(a2))


def relation_backward(theta, x, h1, h2, dr, impl=None):
    impl = impl or _impl
    return impl.relation_backward(_c(theta), _c(x), _c(h1), _c(h2), _c(dr))


def segment_max(x, index, impl=None):
    impl = impl or _impl
    return impl.segment_max(_c(x), np.ascontiguousarray(index, dtype=np.int64))


def value_iteration(reward, goal, gamma, goal_reward, tol=1e-9, max_iter=100_000, impl=None):
    impl = impl or _impl
    v, _ = impl.value_iteration(_c(reward), int(goal[0]), int(goal[1]), float(gamma),
                                float(goal_reward), float(tol), int(max_iter))
    return v


def implementations():
    """All importable backends, keyed by name (used by tests and the benchmark)."""
    out = {"python": _pykernels}
    try:
        from groundnet import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
