"""Jitted multiplicative patch sweep."""

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def patch_sweep(k_ptr, k_idx, k_val, mk_ptr, mk_idx, mk_val, ginv, sigma, res, reverse):
    """One Gauss-Seidel pass over all vertex patches, in place.

    Columns ``2i`` and ``2i + 1`` of the CSC arrays ``k_*`` hold the two kernel
    directions of vertex ``i``; ``mk_*`` holds the same columns multiplied by
    the mass matrix. ``res`` must equal ``r - M sigma`` on entry and is kept
    consistent with ``sigma``.
    """
    nv = ginv.shape[0]
    for step in range(nv):
        i = nv - 1 - step if reverse else step
        c0 = 2 * i
        c1 = c0 + 1
        g0 = 0.0
        for p in range(k_ptr[c0], k_ptr[c0 + 1]):
            g0 += k_val[p] * res[k_idx[p]]
        g1 = 0.0
        for p in range(k_ptr[c1], k_ptr[c1 + 1]):
            g1 += k_val[p] * res[k_idx[p]]
        a = ginv[i, 0, 0] * g0 + ginv[i, 0, 1] * g1
        b = ginv[i, 1, 0] * g0 + ginv[i, 1, 1] * g1
        for p in range(k_ptr[c0], k_ptr[c0 + 1]):
            sigma[k_idx[p]] += a * k_val[p]
        for p in range(k_ptr[c1], k_ptr[c1 + 1]):
            sigma[k_idx[p]] += b * k_val[p]
        for p in range(mk_ptr[c0], mk_ptr[c0 + 1]):
            res[mk_idx[p]] -= a * mk_val[p]
        for p in range(mk_ptr[c1], mk_ptr[c1 + 1]):
            res[mk_idx[p]] -= b * mk_val[p]


def sweep(basis, sigma: np.ndarray, res: np.ndarray, reverse: bool) -> None:
    K, MK = basis.kernel, basis.mass_kernel
    patch_sweep(K.indptr, K.indices, K.data, MK.indptr, MK.indices, MK.data,
                basis.gram_inv, sigma, res, reverse)
