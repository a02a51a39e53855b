# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def theta_sweep(double[:, ::1] Vinv, double logdet, const double[:, ::1] Phi,
                const double[:, :] omega, cnp.int8_t[::1] theta, double c,
                double logit_alpha, const double[::1] uniforms, double[::1] probs_out):
    cdef Py_ssize_t q = omega.shape[0], m = omega.shape[1]
    cdef Py_ssize_t j, a, b, r
    cdef double s, ssq, proj, d, logit, prob, coef
    cdef double[::1] u = np.empty(q)
    cdef int new
    with nogil:
        for j in range(q):
            s = 0.0
            for a in range(q):
                proj = 0.0
                for b in range(q):
                    proj = proj + Vinv[a, b] * Phi[b, j]
                u[a] = proj
                s = s + Phi[a, j] * proj
            ssq = 0.0
            for r in range(m):
                proj = 0.0
                for a in range(q):
                    proj = proj + u[a] * omega[a, r]
                ssq = ssq + proj * proj
            if theta[j] == 0:
                d = 1.0 + c * s
                logit = -0.5 * m * log(d) + 0.5 * (c / d) * ssq + logit_alpha
            else:
                d = 1.0 - c * s
                logit = 0.5 * m * log(d) + 0.5 * (c / d) * ssq + logit_alpha
            prob = _sigmoid(logit)
            probs_out[j] = prob
            new = 1 if uniforms[j] < prob else 0
            if new != theta[j]:
                coef = c / d
                if theta[j] == 1:
                    coef = -coef
                for a in range(q):
                    for b in range(q):
                        Vinv[a, b] = Vinv[a, b] - coef * u[a] * u[b]
                logdet = logdet + log(d)
                theta[j] = new
    return logdet


cdef int _chol_inplace(double* A, Py_ssize_t n, Py_ssize_t ld) noexcept nogil:
    # lower Cholesky of the leading n x n block, row-major with stride ld
    cdef Py_ssize_t i, j, k
    cdef double acc, s
    for j in range(n):
        acc = A[j * ld + j]
        for k in range(j):
            acc = acc - A[j * ld + k] * A[j * ld + k]
        if acc <= 0.0:
            return -1
        acc = sqrt(acc)
        A[j * ld + j] = acc
        for i in range(j + 1, n):
            s = A[i * ld + j]
            for k in range(j):
                s = s - A[i * ld + k] * A[j * ld + k]
            A[i * ld + j] = s / acc
    return 0


def lambda_rows(const double[:, ::1] G, const double[:, ::1] B, const double[::1] psi,
                const cnp.uint8_t[:, ::1] mask, double prior_prec, double inv_temp,
                const double[:, ::1] z):
    cdef Py_ssize_t p = mask.shape[0], q = mask.shape[1]
    cdef Py_ssize_t k, i, j, n, kk
    cdef double w, acc
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((p, q))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] A = np.empty((q, q))
    cdef double[::1] y = np.empty(q)
    cdef Py_ssize_t[::1] idx = np.empty(q, dtype=np.intp)
    cdef int status = 0
    with nogil:
        for k in range(p):
            n = 0
            for j in range(q):
                if mask[k, j]:
                    idx[n] = j
                    n += 1
            if n == 0:
                continue
            w = inv_temp / psi[k]
            for i in range(n):
                for j in range(i + 1):
                    A[i, j] = w * G[idx[i], idx[j]]
                A[i, i] = A[i, i] + prior_prec
            if _chol_inplace(&A[0, 0], n, q) != 0:
                status = -1
                break
            # forward solve L y = a
            for i in range(n):
                acc = w * B[idx[i], k]
                for j in range(i):
                    acc = acc - A[i, j] * y[j]
                y[i] = acc / A[i, i]
            # back solve L^T x = y + z
            for i in range(n):
                y[i] = y[i] + z[k, idx[i]]
            for kk in range(n):
                i = n - 1 - kk
                acc = y[i]
                for j in range(i + 1, n):
                    acc = acc - A[j, i] * y[j]
                y[i] = acc / A[i, i]
            for i in range(n):
                out[k, idx[i]] = y[i]
    if status != 0:
        raise np.linalg.LinAlgError("loading-row precision is not positive definite")
    return out_arr
