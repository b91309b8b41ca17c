"""Thin dgemm wrappers that accumulate into preallocated C-order arrays.

numpy matmul cannot fuse ``c += a @ b``; BLAS can (beta=1).  For C-contiguous
operands the Fortran-order call is made on transposed views, which are
F-contiguous, so nothing is copied.
"""

import numpy as np
from scipy.linalg import blas as _blas


def gemm_acc(c, a, b, alpha=1.0):
    """c += alpha * (a @ b) in place; a (m,k), b (k,n), c (m,n) C-contiguous."""
    if a.flags.c_contiguous and b.flags.c_contiguous and c.flags.c_contiguous:
        # c^T = alpha * b^T a^T + c^T, all F-contiguous views
        _blas.dgemm(alpha, b.T, a.T, 1.0, c.T, overwrite_c=1)
    else:
        c += alpha * (a @ b)
    return c


def gemm_acc_tn(c, a, b, alpha=1.0):
    """c += alpha * (a.T @ b) in place; a (k,m), b (k,n), c (m,n) C-contiguous."""
    if a.flags.c_contiguous and b.flags.c_contiguous and c.flags.c_contiguous:
        # c^T = alpha * b^T (a^T)^T + c^T: pass a^T with trans_b so BLAS
        # re-transposes it back to a
        _blas.dgemm(alpha, b.T, a.T, 1.0, c.T, trans_b=1, overwrite_c=1)
    else:
        c += alpha * (a.T @ b)
    return c


def _selftest():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 4))
    c = rng.standard_normal((5, 4))
    ref = c + 2.0 * (a @ b)
    assert np.allclose(gemm_acc(c.copy(), a, b, 2.0), ref)
    at = rng.standard_normal((7, 5))
    ref = c + 0.5 * (at.T @ b)
    assert np.allclose(gemm_acc_tn(c.copy(), at, b, 0.5), ref)


_selftest()
