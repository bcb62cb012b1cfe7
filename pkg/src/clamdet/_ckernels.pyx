# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the in-batch triplet hinge and sequential Elo updates."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


def triplet_hinge(double[:, ::1] anchor, double[:, ::1] positive, double alpha):
    """Mean hinge over all ordered (i, j != i) pairs, with gradients."""
    cdef Py_ssize_t n = anchor.shape[0]
    cdef Py_ssize_t e = anchor.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double total = 0.0, dpos, dneg, diff, h, inv
    ga_arr = np.zeros((n, e), dtype=np.float64)
    gp_arr = np.zeros((n, e), dtype=np.float64)
    cdef double[:, ::1] ga = ga_arr
    cdef double[:, ::1] gp = gp_arr
    if n <= 1:
        return 0.0, ga_arr, gp_arr
    inv = 1.0 / (n * (n - 1))
    dpos_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] dp = dpos_arr
    for i in range(n):
        dpos = 0.0
        for k in range(e):
            diff = anchor[i, k] - positive[i, k]
            dpos += diff * diff
        dp[i] = dpos
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dneg = 0.0
            for k in range(e):
                diff = anchor[i, k] - positive[j, k]
                dneg += diff * diff
            h = dp[i] - dneg + alpha
            if h > 0.0:
                total += h
                for k in range(e):
                    # d/da_i (|a_i-p_i|^2 - |a_i-p_j|^2) = 2(p_j - p_i)
                    ga[i, k] += 2.0 * (positive[j, k] - positive[i, k]) * inv
                    gp[i, k] -= 2.0 * (anchor[i, k] - positive[i, k]) * inv
                    gp[j, k] += 2.0 * (anchor[i, k] - positive[j, k]) * inv
    return total * inv, ga_arr, gp_arr


def elo_sequential(cnp.int64_t[::1] a_idx, cnp.int64_t[::1] b_idx,
                   double[::1] score_a, Py_ssize_t n_models,
                   double k_factor, double initial):
    """Process matches in order; score_a is 1.0 when model a won, else 0.0."""
    cdef Py_ssize_t m = a_idx.shape[0]
    cdef Py_ssize_t t
    cdef cnp.int64_t a, b
    cdef double ea, delta
    out = np.full(n_models, initial, dtype=np.float64)
    cdef double[::1] r = out
    for t in range(m):
        a = a_idx[t]
        b = b_idx[t]
        ea = 1.0 / (1.0 + pow(10.0, (r[b] - r[a]) / 400.0))
        delta = k_factor * (score_a[t] - ea)
        r[a] += delta
        r[b] -= delta
    return out
