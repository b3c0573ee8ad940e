# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled inner loops: windowed pair counting and one AdaGrad epoch of SN."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector
from libcpp.algorithm cimport sort
from libcpp.pair cimport pair

cnp.import_array()


def count_window_pairs(const cnp.int64_t[::1] ids, const cnp.int64_t[::1] doc,
                       Py_ssize_t window, cnp.int64_t n_words):
    """Return sorted unique keys ``i * n_words + j`` (i <= j) and their counts.

    ``ids`` holds vocabulary indices with -1 for out-of-vocabulary tokens;
    ``doc`` holds the document index of every position. Windows never cross
    document boundaries.
    """
    cdef Py_ssize_t T = ids.shape[0]
    cdef Py_ssize_t p, q, stop
    cdef cnp.int64_t a, b, key
    cdef unordered_map[cnp.int64_t, double] acc
    with nogil:
        for p in range(T):
            a = ids[p]
            if a < 0:
                continue
            stop = p + window + 1
            if stop > T:
                stop = T
            for q in range(p + 1, stop):
                if doc[q] != doc[p]:
                    break
                b = ids[q]
                if b < 0:
                    continue
                if a <= b:
                    key = a * n_words + b
                else:
                    key = b * n_words + a
                acc[key] += 1.0

    cdef vector[pair[cnp.int64_t, double]] items
    cdef pair[cnp.int64_t, double] kv
    items.reserve(acc.size())
    for kv in acc:
        items.push_back(pair[cnp.int64_t, double](kv.first, kv.second))
    sort(items.begin(), items.end())

    cdef Py_ssize_t n = items.size()
    keys = np.empty(n, dtype=np.int64)
    counts = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] kv_view = keys
    cdef double[::1] cv_view = counts
    cdef Py_ssize_t t
    for t in range(n):
        kv_view[t] = items[t].first
        cv_view[t] = items[t].second
    return keys, counts


def sn_adagrad_epoch(double[:, ::1] vectors, double[:, ::1] accum,
                     double[::1] bias_state,
                     const cnp.int64_t[::1] rows, const cnp.int64_t[::1] cols,
                     const double[::1] log_x, const double[::1] weight,
                     const cnp.int64_t[::1] order, double lr, double eps):
    """Sequential AdaGrad sweep over pairs in ``order``; updates in place.

    ``bias_state`` is ``[C, accumulator_C]``. Returns the sum of weighted
    squared residuals seen during the sweep (pre-update values).
    """
    cdef Py_ssize_t d = vectors.shape[1]
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t t, k, i, j, q
    cdef double res, g, gk, norm2, total = 0.0
    cdef double c = bias_state[0]
    cdef double gc = bias_state[1]
    cdef double[::1] s = np.empty(d, dtype=np.float64)
    with nogil:
        for t in range(n):
            k = order[t]
            i = rows[k]
            j = cols[k]
            norm2 = 0.0
            for q in range(d):
                s[q] = vectors[i, q] + vectors[j, q]
                norm2 = norm2 + s[q] * s[q]
            res = norm2 + c - log_x[k]
            total = total + weight[k] * res * res
            g = 2.0 * weight[k] * res
            # d/dv_i ||v_i + v_j||^2 = 2 s; a self pair sees it twice
            if i == j:
                for q in range(d):
                    gk = 4.0 * g * s[q]
                    accum[i, q] = accum[i, q] + gk * gk
                    vectors[i, q] = vectors[i, q] - lr * gk / sqrt(accum[i, q] + eps)
            else:
                for q in range(d):
                    gk = 2.0 * g * s[q]
                    accum[i, q] = accum[i, q] + gk * gk
                    vectors[i, q] = vectors[i, q] - lr * gk / sqrt(accum[i, q] + eps)
                    accum[j, q] = accum[j, q] + gk * gk
                    vectors[j, q] = vectors[j, q] - lr * gk / sqrt(accum[j, q] + eps)
            gc = gc + g * g
            c = c - lr * g / sqrt(gc + eps)
    bias_state[0] = c
    bias_state[1] = gc
    return total
