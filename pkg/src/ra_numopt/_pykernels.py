"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def _segment_ids(aff_ptr):
    return np.repeat(np.arange(len(aff_ptr) - 1), np.diff(aff_ptr))


def reception(P, aff_ptr, aff_idx):
    factors = 1.0 - P[aff_idx]
    # every segment holds at least the receiver, so reduceat never sees an empty slice
    return np.multiply.reduceat(factors, aff_ptr[:-1]) if len(factors) else np.ones(0)


def interference_weights(w, P, aff_ptr, aff_idx, n):
    if len(aff_idx) == 0:
        return np.zeros(n)
    seg = _segment_ids(aff_ptr)
    factors = 1.0 - P[aff_idx]
    zero = factors == 0.0
    nonzero_prod = np.multiply.reduceat(np.where(zero, 1.0, factors), aff_ptr[:-1])
    zero_count = np.add.reduceat(zero.astype(np.int64), aff_ptr[:-1])
    zc = zero_count[seg]
    with np.errstate(divide="ignore", invalid="ignore"):
        excl = np.where(
            zc == 0,
            nonzero_prod[seg] / np.where(zero, 1.0, factors),
            np.where((zc == 1) & zero, nonzero_prod[seg], 0.0),
        )
    return np.bincount(aff_idx, weights=w[seg] * excl, minlength=n)
