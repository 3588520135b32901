# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batched kernels for the portfolio solve chain.

Semantics mirror ``_core_py`` exactly (same truncation, ridge, and budget
guards); only the loop structure and the LAPACK entry point differ.  The
eigensolver is the divide-and-conquer ``dsyevd``, the same driver the
NumPy fallback uses, so results agree to floating-point reduction order.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_lapack cimport dsyevd

cnp.import_array()

BACKEND_NAME = "cython"

RIDGE_SCALE = 1e-8

cdef double BUDGET_REL_TOL = 1e-12


def batch_gmvp(sigma, double eps=1e-6, ridge=None):
    """Batched truncate-ridge-invert solve: (B,N,N) -> (w, P, D, ok)."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] sig = np.ascontiguousarray(
        sigma, dtype=np.float64
    )
    cdef Py_ssize_t B = sig.shape[0]
    cdef int n = <int> sig.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] w = np.zeros((B, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] P = np.zeros((B, n, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] D = np.zeros(B)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ok = np.ones(B, dtype=np.uint8)

    cdef double use_ridge = -1.0
    if ridge is not None:
        use_ridge = float(ridge)

    # dsyevd workspace: fixed-size upper bounds for jobz='V'
    cdef int lwork = 1 + 6 * n + 2 * n * n
    cdef int liwork = 3 + 5 * n
    cdef cnp.ndarray[cnp.float64_t, ndim=1] work = np.empty(lwork)
    cdef cnp.ndarray[int, ndim=1] iwork = np.empty(liwork, dtype=np.intc)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.empty((n, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lam = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] denom = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] pone = np.empty(n)

    cdef char jobz = b"V"
    cdef char uplo = b"L"
    cdef int info
    cdef Py_ssize_t b
    cdef int i, j, k
    cdef double trace, delta, lam_max, acc, dval, max_abs_p

    for b in range(B):
        trace = 0.0
        for i in range(n):
            for j in range(n):
                A[i, j] = sig[b, i, j]
            trace += sig[b, i, i]
        delta = use_ridge if use_ridge >= 0.0 else RIDGE_SCALE * trace / n

        # column-major LAPACK view of the C buffer: rows of A become eigenvectors
        dsyevd(&jobz, &uplo, &n, &A[0, 0], &n, &lam[0], &work[0], &lwork,
               &iwork[0], &liwork, &info)
        if info != 0:
            ok[b] = 0
            continue
        lam_max = lam[n - 1]
        if lam_max <= 0.0:
            ok[b] = 0
            continue
        for k in range(n):
            denom[k] = (lam[k] if lam[k] >= eps * lam_max else 0.0) + delta
        for k in range(n):
            if denom[k] <= 0.0:
                ok[b] = 0
                break
        if not ok[b]:
            continue

        # P = V diag(1/denom) V'; eigenvector k sits in row k of the C view
        max_abs_p = 0.0
        for i in range(n):
            for j in range(i, n):
                acc = 0.0
                for k in range(n):
                    acc += A[k, i] * A[k, j] / denom[k]
                P[b, i, j] = acc
                P[b, j, i] = acc
                if fabs(acc) > max_abs_p:
                    max_abs_p = fabs(acc)

        dval = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += P[b, i, j]
            pone[i] = acc
            dval += acc
        if fabs(dval) <= BUDGET_REL_TOL * (1.0 if max_abs_p < 1.0 else max_abs_p):
            ok[b] = 0
            for i in range(n):
                for j in range(n):
                    P[b, i, j] = 0.0
            continue
        D[b] = dval
        for i in range(n):
            w[b, i] = pone[i] / dval

    return w, P, D, ok.view(np.bool_)


def batch_quadform(w, sigma):
    """Per-instance portfolio variance w' Sigma w."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] wv = np.ascontiguousarray(
        w, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=3] sig = np.ascontiguousarray(
        sigma, dtype=np.float64
    )
    cdef Py_ssize_t B = wv.shape[0]
    cdef int n = <int> wv.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(B)
    cdef Py_ssize_t b
    cdef int i, j
    cdef double acc, row
    for b in range(B):
        acc = 0.0
        for i in range(n):
            row = 0.0
            for j in range(n):
                row += sig[b, i, j] * wv[b, j]
            acc += wv[b, i] * row
        out[b] = acc
    return out


def batch_decision_grad(w, P, D, sigma_true):
    """Free-entry regret gradient: G = -P f w' + D (f'w) w w', f = 2 Sigma w."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] wv = np.ascontiguousarray(
        w, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Pv = np.ascontiguousarray(
        P, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=1] Dv = np.ascontiguousarray(
        D, dtype=np.float64
    )
    cdef cnp.ndarray[cnp.float64_t, ndim=3] sig = np.ascontiguousarray(
        sigma_true, dtype=np.float64
    )
    cdef Py_ssize_t B = wv.shape[0]
    cdef int n = <int> wv.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] G = np.zeros((B, n, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] f = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] Pf = np.empty(n)
    cdef Py_ssize_t b
    cdef int i, j
    cdef double acc, fw, scale
    for b in range(B):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += sig[b, i, j] * wv[b, j]
            f[i] = 2.0 * acc
        fw = 0.0
        for i in range(n):
            fw += f[i] * wv[b, i]
            acc = 0.0
            for j in range(n):
                acc += Pv[b, i, j] * f[j]
            Pf[i] = acc
        scale = Dv[b] * fw
        for i in range(n):
            for j in range(n):
                G[b, i, j] = -Pf[i] * wv[b, j] + scale * wv[b, i] * wv[b, j]
    return G
