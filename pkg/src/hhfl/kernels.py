"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``HHFL_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("HHFL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def combine(coeffs, vectors):
    """Rows of ``coeffs @ vectors``, summed in ascending index order."""
    return _impl.combine(
        np.ascontiguousarray(coeffs, dtype=np.float64),
        np.ascontiguousarray(vectors, dtype=np.float64),
    )


def softmax_local_step(params, X, y, idx, offsets, lr, num_classes):
    """One SGD step of softmax regression for every client at once.

    Client k uses dataset rows ``idx[offsets[k]:offsets[k+1]]``.
    """
    return _impl.softmax_local_step(
        np.ascontiguousarray(params, dtype=np.float64),
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.int64),
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(offsets, dtype=np.int64),
        float(lr),
        int(num_classes),
    )


def implementations():
    """Every backend available in this process, keyed by name."""
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
