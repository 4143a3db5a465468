# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels.

Mirrors ``cocolq._kernels_py`` (same algorithms, same calling conventions);
that module documents the semantics and serves as the fallback when this
extension is not built.
"""

import numpy as np

from libc.math cimport copysign, fabs, isfinite, sqrt

BACKEND = "cython"

cdef int _MAX_SWEEPS = 60
cdef double _EIG_TOL = 5e-15
cdef double _SVD_TOL = 1e-15


cdef inline void _rotation(double app, double aqq, double apq,
                           double *c, double *s) noexcept nogil:
    cdef double theta = 0.5 * (aqq - app) / apq
    cdef double t
    if fabs(theta) > 1e154:
        t = 0.5 / theta
    else:
        t = copysign(1.0, theta) / (fabs(theta) + sqrt(1.0 + theta * theta))
    c[0] = 1.0 / sqrt(1.0 + t * t)
    s[0] = t * c[0]


def jacobi_eig(S):
    A_arr = np.array(S, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] A = A_arr
    cdef Py_ssize_t n = A.shape[0]
    V_arr = np.eye(n)
    cdef double[:, ::1] V = V_arr
    cdef Py_ssize_t p, q, k, sweep
    cdef double frob, off, apq, c, s, akp, akq

    if n == 1:
        return A_arr.reshape(1).copy(), V_arr

    frob = 0.0
    for p in range(n):
        for q in range(n):
            frob += A[p, q] * A[p, q]
    frob = sqrt(frob)
    if frob == 0.0:
        return np.zeros(n), V_arr

    for sweep in range(_MAX_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off += 2.0 * A[p, q] * A[p, q]
        if sqrt(off) <= _EIG_TOL * frob:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if fabs(apq) <= 1e-300:
                    continue
                _rotation(A[p, p], A[q, q], apq, &c, &s)
                for k in range(n):
                    akp = A[p, k]
                    akq = A[q, k]
                    A[p, k] = c * akp - s * akq
                    A[q, k] = s * akp + c * akq
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for k in range(n):
                    akp = V[k, p]
                    akq = V[k, q]
                    V[k, p] = c * akp - s * akq
                    V[k, q] = s * akp + c * akq

    w = np.diag(A_arr).copy()
    order = np.argsort(w, kind="stable")
    return w[order], np.ascontiguousarray(V_arr[:, order])


def jacobi_svd(M):
    A_arr = np.array(M, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] A = A_arr
    cdef Py_ssize_t n = A.shape[0]
    V_arr = np.eye(n)
    cdef double[:, ::1] V = V_arr
    cdef Py_ssize_t p, q, k, sweep
    cdef double app, aqq, apq, denom, c, s, akp, akq
    cdef bint rotated

    for sweep in range(_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = 0.0
                aqq = 0.0
                apq = 0.0
                for k in range(n):
                    app += A[k, p] * A[k, p]
                    aqq += A[k, q] * A[k, q]
                    apq += A[k, p] * A[k, q]
                denom = sqrt(app * aqq)
                if denom <= 0.0 or fabs(apq) <= _SVD_TOL * denom:
                    continue
                rotated = True
                _rotation(app, aqq, apq, &c, &s)
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    akp = V[k, p]
                    akq = V[k, q]
                    V[k, p] = c * akp - s * akq
                    V[k, q] = s * akp + c * akq
        if not rotated:
            break

    s_arr = np.sqrt((A_arr * A_arr).sum(axis=0))
    U_arr = np.empty_like(A_arr)
    for p in range(n):
        if s_arr[p] > 1e-300:
            U_arr[:, p] = A_arr[:, p] / s_arr[p]
        else:
            U_arr[:, p] = 0.0
            U_arr[p, p] = 1.0
    order = np.argsort(-s_arr, kind="stable")
    return (
        np.ascontiguousarray(U_arr[:, order]),
        s_arr[order],
        np.ascontiguousarray(V_arr[:, order]),
    )


def chol_factor(S):
    A_arr = np.array(S, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] A = A_arr
    cdef Py_ssize_t n = A.shape[0]
    L_arr = np.zeros((n, n))
    cdef double[:, ::1] L = L_arr
    cdef Py_ssize_t i, j, k
    cdef double d, acc

    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not (d > 0.0) or not isfinite(d):
            raise ValueError(f"matrix is not positive definite (pivot {j})")
        L[j, j] = sqrt(d)
        for i in range(j + 1, n):
            acc = A[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    return L_arr


def chol_solve_factor(L, B):
    L_arr = np.ascontiguousarray(L, dtype=np.float64)
    X_arr = np.array(B, dtype=np.float64, copy=True, order="C")
    vec = X_arr.ndim == 1
    if vec:
        X_arr = X_arr[:, None].copy()
    cdef double[:, ::1] Lm = L_arr
    cdef double[:, ::1] X = X_arr
    cdef Py_ssize_t n = Lm.shape[0]
    cdef Py_ssize_t m = X.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc

    for j in range(m):
        for i in range(n):
            acc = X[i, j]
            for k in range(i):
                acc -= Lm[i, k] * X[k, j]
            X[i, j] = acc / Lm[i, i]
        for i in range(n - 1, -1, -1):
            acc = X[i, j]
            for k in range(i + 1, n):
                acc -= Lm[k, i] * X[k, j]
            X[i, j] = acc / Lm[i, i]
    return X_arr[:, 0] if vec else X_arr
