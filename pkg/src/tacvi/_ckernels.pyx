# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_fallback``. Same signatures, same results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p, NAN

cnp.import_array()


def masked_bce(const double[:, ::1] P, const double[:, ::1] Y,
               const double[:, ::1] W, double eps):
    cdef Py_ssize_t n = P.shape[0], c = P.shape[1], i, j
    cdef double norm = 1.0 / (n * c), acc = 0.0, p, y, w
    grad_arr = np.zeros((n, c))
    cdef double[:, ::1] grad = grad_arr
    for i in range(n):
        for j in range(c):
            w = W[i, j]
            if w == 0.0:
                continue
            p = P[i, j]
            y = Y[i, j]
            if p < eps:
                p = eps
            elif p > 1.0 - eps:
                p = 1.0 - eps
            else:
                grad[i, j] = -(y / p - (1.0 - y) / (1.0 - p)) * w * norm
            acc += (y * log(p) + (1.0 - y) * log1p(-p)) * w
    return -acc * norm, grad_arr


def compression(const double[:, ::1] P, const double[:, ::1] Q, const double[::1] w):
    cdef Py_ssize_t n = P.shape[0], d = P.shape[1], i, j
    cdef double norm = 1.0 / (2.0 * n * d), acc = 0.0, row, p, q, wi
    gp_arr = np.zeros((n, d))
    gq_arr = np.zeros((n, d))
    cdef double[:, ::1] gp = gp_arr
    cdef double[:, ::1] gq = gq_arr
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        row = 0.0
        for j in range(d):
            p = P[i, j]
            q = Q[i, j]
            row += q * q - log(q * q) + p * p - 1.0
            gp[i, j] = 2.0 * p * wi * norm
            gq[i, j] = (2.0 * q - 2.0 / q) * wi * norm
        acc += row * wi
    return acc * norm, gp_arr, gq_arr


def row_sq_error(const double[:, ::1] A, const double[:, ::1] B, const double[::1] w):
    cdef Py_ssize_t n = A.shape[0], d = A.shape[1], i, j
    cdef double acc = 0.0, row, diff, wi
    ga_arr = np.zeros((n, d))
    cdef double[:, ::1] ga = ga_arr
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        row = 0.0
        for j in range(d):
            diff = A[i, j] - B[i, j]
            row += diff * diff
            ga[i, j] = 2.0 * diff * wi
        acc += row * wi
    return acc, ga_arr, -ga_arr


def ap_rows(const double[:, ::1] S, const double[:, ::1] Y):
    cdef Py_ssize_t n = S.shape[0], c = S.shape[1], i, j, k
    cdef long rank, hits, npos
    cdef double prec, sj
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for i in range(n):
        npos = 0
        prec = 0.0
        for j in range(c):
            if Y[i, j] <= 0.5:
                continue
            npos += 1
            sj = S[i, j]
            rank = 0
            hits = 0
            for k in range(c):
                if S[i, k] >= sj:
                    rank += 1
                    if Y[i, k] > 0.5:
                        hits += 1
            prec += <double>hits / rank
        out[i] = prec / npos if npos > 0 else NAN
    return out_arr


def rank_loss_rows(const double[:, ::1] S, const double[:, ::1] Y):
    cdef Py_ssize_t n = S.shape[0], c = S.shape[1], i, j, k
    cdef long npos
    cdef double bad, sj
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    for i in range(n):
        npos = 0
        bad = 0.0
        for j in range(c):
            if Y[i, j] <= 0.5:
                continue
            npos += 1
            sj = S[i, j]
            for k in range(c):
                if Y[i, k] > 0.5:
                    continue
                if sj < S[i, k]:
                    bad += 1.0
                elif sj == S[i, k]:
                    bad += 0.5
        if npos == 0 or npos == c:
            out[i] = NAN
        else:
            out[i] = bad / (npos * (c - npos))
    return out_arr


def auc_cols(const double[:, ::1] S, const double[:, ::1] Y):
    cdef Py_ssize_t n = S.shape[0], c = S.shape[1], j, a, b, t
    cdef long npos
    cdef double rsum, avg
    cdef cnp.intp_t[::1] order
    out_arr = np.empty(c)
    cdef double[::1] out = out_arr
    cdef double[::1] col
    for j in range(c):
        col = np.ascontiguousarray(S[:, j])
        order = np.argsort(col, kind="stable")
        npos = 0
        rsum = 0.0
        a = 0
        while a < n:
            b = a
            while b + 1 < n and col[order[b + 1]] == col[order[a]]:
                b += 1
            avg = 0.5 * (a + b) + 1.0
            for t in range(a, b + 1):
                if Y[order[t], j] > 0.5:
                    npos += 1
                    rsum += avg
            a = b + 1
        if npos == 0 or npos == n:
            out[j] = NAN
        else:
            out[j] = (rsum - npos * (npos + 1) / 2.0) / (<double>npos * (n - npos))
    return out_arr
