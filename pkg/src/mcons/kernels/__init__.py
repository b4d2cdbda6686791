"""Pairwise consensus kernels with a numba path and a pure-numpy fallback.

The backend is picked at import: ``MCONS_NUMBA=0`` forces numpy, otherwise numba
is used when it imports. ``MCONS_THREADS`` caps the numba thread pool
(0 or unset = numba's default). Switch at runtime with :func:`set_backend`.
"""
import os

import numpy as np

from mcons.errors import OutsideInjectivityRadius
from mcons.kernels import _numpy

_threads = int(os.environ.get("MCONS_THREADS", "0") or 0)
if _threads > 0:
    # must precede the first numba import to widen the pool past the core count
    os.environ.setdefault("NUMBA_NUM_THREADS", str(_threads))
# skip probing TBB, whose version check warns on most installs
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba
    from mcons.kernels import _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _numba = None

_KERNELS = {"numpy": _numpy}
if _numba is not None:
    _KERNELS["numba"] = _numba

_active = _numpy
if _numba is not None and os.environ.get("MCONS_NUMBA", "1") != "0":
    _active = _numba


def available_backends():
    return sorted(_KERNELS)


def backend():
    return "numba" if _active is _numba and _numba is not None else "numpy"


def set_backend(name):
    global _active
    if name not in _KERNELS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = _KERNELS[name]


def set_threads(n):
    """Cap round-internal parallelism; 0 restores numba's full pool."""
    if numba is None:
        return
    limit = numba.config.NUMBA_NUM_THREADS
    numba.set_num_threads(limit if n <= 0 else min(int(n), limit))


if _threads > 0:
    set_threads(_threads)


def _check(status, N, what):
    if status >= 0:
        i, j = divmod(status, N)
        raise OutsideInjectivityRadius(
            f"outside injectivity radius: {what} between nodes {i} and {j}"
        )


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sphere_pair_dist_sq(X):
    return _active.sphere_pair_dist_sq(_f64(X))


def sphere_consensus_grad(X, Q):
    G, status = _active.sphere_consensus_grad(_f64(X), _f64(Q))
    _check(status, X.shape[0], "logarithm")
    return G


def sphere_transport_mix(src, dst, G, P):
    out, status = _active.sphere_transport_mix(_f64(src), _f64(dst), _f64(G), _f64(P))
    _check(status, src.shape[0], "transport")
    return out


def grassmann_pair_dist_sq(X):
    return _active.grassmann_pair_dist_sq(_f64(X))


def grassmann_consensus_grad(X, Q):
    G, status = _active.grassmann_consensus_grad(_f64(X), _f64(Q))
    _check(status, X.shape[0], "logarithm")
    return G
