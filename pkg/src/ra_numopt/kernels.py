"""Backend selection for the throughput kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is.  Set ``RA_NUMOPT_PURE_PYTHON=1`` to force the fallback.

``reception(P, aff_ptr, aff_idx)``
    Per link k, the product of ``1 - P[l]`` over the nodes l affecting k.
``interference_weights(w, P, aff_ptr, aff_idx, n)``
    Per node l, ``sum_k w[k] * prod_{l' in aff(k), l' != l} (1 - P[l'])``
    over the links k that l affects; with ``w = mu * c * p`` this is the
    magnitude of d(sum_k mu_k x_k)/dP_l.
"""
import os

from ra_numopt import _pykernels

try:
    if os.environ.get("RA_NUMOPT_PURE_PYTHON"):
        raise ImportError("compiled kernels disabled by RA_NUMOPT_PURE_PYTHON")
    from ra_numopt import _ckernels
except ImportError:
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"
_impl = _BACKENDS[BACKEND]


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {available_backends()}") from None


def set_backend(name):
    """Switch the process-wide kernel backend (used by the benchmark)."""
    global BACKEND, _impl
    _impl = get_backend(name)
    BACKEND = name


def reception(P, aff_ptr, aff_idx):
    return _impl.reception(P, aff_ptr, aff_idx)


def interference_weights(w, P, aff_ptr, aff_idx, n):
    return _impl.interference_weights(w, P, aff_ptr, aff_idx, n)
