# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must stay operation-for-operation identical to
``_kernels_py`` so both backends return bitwise-equal results."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p

cnp.import_array()


cdef inline double _softplus(double z) nogil:
    if z > 0.0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def batch_hard_select(const double[:, ::1] dist, const long long[::1] labels):
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t a, j
    cdef long long[::1] pos = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] neg = np.full(n, -1, dtype=np.int64)
    cdef double best_p, best_n, d
    with nogil:
        for a in range(n):
            best_p = -1.0
            best_n = 0.0
            for j in range(n):
                d = dist[a, j]
                if labels[j] == labels[a]:
                    if j != a and d > best_p:
                        best_p = d
                        pos[a] = j
                else:
                    if neg[a] < 0 or d < best_n:
                        best_n = d
                        neg[a] = j
    return np.asarray(pos), np.asarray(neg)


def triplet_all(const double[:, ::1] dist, const long long[::1] labels,
                double margin, bint use_softplus):
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t a, p, q
    cdef double[:, ::1] coef = np.zeros((n, n), dtype=np.float64)
    cdef double value = 0.0
    cdef double z, g
    cdef long long count = 0
    with nogil:
        for a in range(n):
            for p in range(n):
                if p == a or labels[p] != labels[a]:
                    continue
                for q in range(n):
                    if labels[q] == labels[a]:
                        continue
                    count += 1
                    z = margin + dist[a, p] - dist[a, q]
                    if use_softplus:
                        value += _softplus(z)
                        g = _sigmoid(z)
                    elif z > 0.0:
                        value += z
                        g = 1.0
                    else:
                        continue
                    coef[a, p] += g
                    coef[a, q] -= g
    return value, np.asarray(coef), count


def query_metrics(const long long[:, ::1] order, const long long[::1] q_ids,
                  const long long[::1] q_cams, const long long[::1] g_ids,
                  const long long[::1] g_cams):
    cdef Py_ssize_t nq = order.shape[0]
    cdef Py_ssize_t ng = order.shape[1]
    cdef Py_ssize_t i, j, g
    cdef long long rank, hits
    cdef double ap_sum
    cdef double[::1] ap = np.full(nq, np.nan, dtype=np.float64)
    cdef long long[::1] first = np.zeros(nq, dtype=np.int64)
    cdef long long[::1] kept = np.zeros(nq, dtype=np.int64)
    with nogil:
        for i in range(nq):
            rank = 0
            hits = 0
            ap_sum = 0.0
            for j in range(ng):
                g = order[i, j]
                if g_ids[g] == q_ids[i] and g_cams[g] == q_cams[i]:
                    continue
                rank += 1
                if g_ids[g] == q_ids[i]:
                    hits += 1
                    ap_sum += <double>hits / <double>rank
                    if first[i] == 0:
                        first[i] = rank
            kept[i] = rank
            if hits > 0:
                ap[i] = ap_sum / <double>hits
    return np.asarray(ap), np.asarray(first), np.asarray(kept)
