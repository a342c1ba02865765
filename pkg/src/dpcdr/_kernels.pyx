# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loop kernels. Semantics mirror :mod:`dpcdr._kernels_py` exactly."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dirac_rk4(const double[::1] theta_d0, const double[::1] theta_g0, const double[::1] m,
              double tau, double h, Py_ssize_t n_steps):
    cdef Py_ssize_t dim = theta_d0.shape[0]
    out_d = np.empty((n_steps + 1, dim), dtype=np.float64)
    out_g = np.empty((n_steps + 1, dim), dtype=np.float64)
    cdef double[:, ::1] od = out_d
    cdef double[:, ::1] og = out_g
    cdef Py_ssize_t i, k
    cdef double d, g, mi, hh = 0.5 * h, h6 = h / 6.0
    cdef double k1d, k1g, k2d, k2g, k3d, k3g, k4d, k4g, d2, g2
    for i in range(dim):
        d = theta_d0[i]
        g = theta_g0[i]
        mi = m[i]
        od[0, i] = d
        og[0, i] = g
        for k in range(1, n_steps + 1):
            k1d = mi - g - tau * d
            k1g = d
            d2 = d + hh * k1d
            g2 = g + hh * k1g
            k2d = mi - g2 - tau * d2
            k2g = d2
            d2 = d + hh * k2d
            g2 = g + hh * k2g
            k3d = mi - g2 - tau * d2
            k3g = d2
            d2 = d + h * k3d
            g2 = g + h * k3g
            k4d = mi - g2 - tau * d2
            k4g = d2
            d = d + h6 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
            g = g + h6 * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
            od[k, i] = d
            og[k, i] = g
    return out_d, out_g


def grouped_sq_norms(const double[:, ::1] a, const double[:, ::1] d, const cnp.int64_t[::1] groups,
                     Py_ssize_t n_groups, double bias_weight):
    """Squared Frobenius norm of sum_{k in g} a_k d_k^T plus (bias) sum_k d_k, per group."""
    cdef Py_ssize_t n_rows = a.shape[0], n_in = a.shape[1], n_out = d.shape[1]
    cdef Py_ssize_t r, i, j, kk, ll, q
    out = np.zeros(n_groups, dtype=np.float64)
    cdef double[::1] o = out
    # rows bucketed by group, stable in row order
    order = np.argsort(np.asarray(groups), kind="stable").astype(np.int64)
    counts = np.bincount(np.asarray(groups), minlength=n_groups)
    starts = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    cdef cnp.int64_t[::1] ordv = order
    cdef cnp.int64_t[::1] st = starts
    cdef double aa, dd, acc
    for q in range(n_groups):
        acc = 0.0
        for i in range(st[q], st[q + 1]):
            kk = ordv[i]
            for j in range(st[q], st[q + 1]):
                ll = ordv[j]
                aa = 0.0
                for r in range(n_in):
                    aa = aa + a[kk, r] * a[ll, r]
                dd = 0.0
                for r in range(n_out):
                    dd = dd + d[kk, r] * d[ll, r]
                acc = acc + (aa + bias_weight) * dd
        o[q] = acc
    return out


def loo_ranks(const double[:, ::1] scores, const cnp.int64_t[::1] pos_col, const cnp.int64_t[:, ::1] item_ids):
    cdef Py_ssize_t n = scores.shape[0], c = scores.shape[1], u, j
    cdef double sp, sj
    cdef cnp.int64_t ip, rank
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    for u in range(n):
        sp = scores[u, pos_col[u]]
        ip = item_ids[u, pos_col[u]]
        rank = 1
        # branch-free count; the positive's own column adds 0
        for j in range(c):
            sj = scores[u, j]
            rank += (sj > sp) | ((sj == sp) & (item_ids[u, j] < ip))
        o[u] = rank
    return out
