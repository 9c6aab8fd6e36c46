"""Backend selection for the hot kernels.

The compiled Cython module is used when it imports; otherwise the NumPy
fallback takes over. Setting ``DPQHD_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _fallback

try:
    if os.environ.get("DPQHD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _fallback
    BACKEND = "python"

round_robin_pairs = _fallback.round_robin_pairs
adaptive_one = _fallback.adaptive_one


def backends():
    """Map of every importable backend name to its module."""
    found = {"python": _fallback}
    try:
        from . import _kernels
        found["cython"] = _kernels
    except ImportError:
        pass
    return found


def jacobi_orthogonalize(at, v, pairs):
    return _impl.jacobi_orthogonalize(at, v, pairs)


def pack_bits(values, bits):
    return _impl.pack_bits(values, bits)


def unpack_bits(buf, bits, n):
    return _impl.unpack_bits(buf, bits, n)


def full_scores(W, w_scale, w_norm, H, h_scale, h_norm, chunk):
    return _impl.full_scores(W, w_scale, w_norm, H, h_scale, h_norm, chunk)


def adaptive_batch(W, w_scale, w_norm, H, h_scale, h_norm, chunk, tau,
                   eliminate, early_exit, complete):
    return _impl.adaptive_batch(W, w_scale, w_norm, H, h_scale, h_norm, chunk,
                                tau, eliminate, early_exit, complete)
