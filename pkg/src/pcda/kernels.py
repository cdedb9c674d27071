"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``PCDA_PURE_PYTHON=1`` to
force the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if not os.environ.get("PCDA_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_sqdist(X, Y):
    """Squared Euclidean distances, shape (len(X), len(Y))."""
    return _impl.pairwise_sqdist(_f64(X), _f64(Y))


def segment_max(H, offsets):
    return _impl.segment_max(_f64(H), np.ascontiguousarray(offsets, dtype=np.int64))


def segment_max_backward(grad, argmax, n_rows):
    return _impl.segment_max_backward(
        _f64(grad), np.ascontiguousarray(argmax, dtype=np.int64), int(n_rows)
    )
