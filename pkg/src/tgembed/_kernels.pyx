# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: walk sampling and fused LSTM cell arithmetic.

The walk samplers must stay numerically identical to ``_kernels_py``: same
candidate order, same summation order, one pre-drawn uniform per step. The
cell kernels agree with their numpy twins to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport int64_t

cnp.import_array()


cdef inline bint _adjacent(const int64_t[::1] nbr_indptr, const int64_t[::1] nbr_set,
                           int64_t u, int64_t v) noexcept nogil:
    cdef int64_t lo = nbr_indptr[u], hi = nbr_indptr[u + 1], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if nbr_set[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo < nbr_indptr[u + 1] and nbr_set[lo] == v


cdef inline int64_t _upper(const int64_t[::1] a, int64_t lo, int64_t hi, int64_t x,
                           bint inclusive) noexcept nogil:
    # first index in [lo, hi) with a[i] > x (inclusive) or a[i] >= x (strict)
    cdef int64_t mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if (a[mid] <= x) if inclusive else (a[mid] < x):
            lo = mid + 1
        else:
            hi = mid
    return lo


def temporal_walks(const int64_t[::1] indptr, const int64_t[::1] adj_nbr,
                   const int64_t[::1] adj_t, const double[::1] adj_w,
                   const int64_t[::1] nbr_indptr, const int64_t[::1] nbr_set,
                   const int64_t[::1] starts, const int64_t[::1] t_refs,
                   double p, double q, double tau, int64_t length,
                   const double[:, ::1] uniforms):
    cdef Py_ssize_t n_walks = starts.shape[0]
    nodes_arr = np.full((n_walks, length + 1), -1, dtype=np.int64)
    times_arr = np.zeros((n_walks, length), dtype=np.int64)
    steps_arr = np.zeros(n_walks, dtype=np.int64)
    cdef int64_t[:, ::1] nodes = nodes_arr
    cdef int64_t[:, ::1] times = times_arr
    cdef int64_t[::1] steps = steps_arr
    cdef double inv_p = 1.0 / p, inv_q = 1.0 / q
    cdef Py_ssize_t i
    cdef int64_t s, cur, prev, t_in, lo, hi, e, nxt, t_last, chosen
    cdef double total, acc, target, beta, mass

    with nogil:
        for i in range(n_walks):
            cur = starts[i]
            prev = -1
            t_in = t_refs[i]
            nodes[i, 0] = cur
            for s in range(length):
                lo = indptr[cur]
                if s == 0:
                    hi = _upper(adj_t, lo, indptr[cur + 1], t_in, False)
                else:
                    hi = _upper(adj_t, lo, indptr[cur + 1], t_in, True)
                if hi == lo:
                    break
                t_last = adj_t[hi - 1]
                total = 0.0
                for e in range(lo, hi):
                    total += _mass(adj_nbr[e], prev, adj_w[e], adj_t[e], t_last, tau,
                                   inv_p, inv_q, nbr_indptr, nbr_set)
                if not total > 0.0:
                    break
                target = uniforms[i, s] * total
                acc = 0.0
                chosen = -1
                for e in range(lo, hi):
                    mass = _mass(adj_nbr[e], prev, adj_w[e], adj_t[e], t_last, tau,
                                 inv_p, inv_q, nbr_indptr, nbr_set)
                    if mass > 0.0:
                        chosen = e
                    acc += mass
                    if acc > target and mass > 0.0:
                        break
                nxt = adj_nbr[chosen]
                prev = cur
                cur = nxt
                t_in = adj_t[chosen]
                nodes[i, s + 1] = cur
                times[i, s] = t_in
                steps[i] = s + 1
    return nodes_arr, times_arr, steps_arr


cdef inline double _mass(int64_t nxt, int64_t prev, double w, int64_t t, int64_t t_last,
                         double tau, double inv_p, double inv_q,
                         const int64_t[::1] nbr_indptr, const int64_t[::1] nbr_set) noexcept nogil:
    cdef double beta
    if prev < 0:
        beta = 1.0
    elif nxt == prev:
        beta = inv_p
    elif _adjacent(nbr_indptr, nbr_set, prev, nxt):
        beta = 1.0
    else:
        beta = inv_q
    return beta * w * exp(-(<double>(t_last - t)) / tau)


def uniform_walks(const int64_t[::1] indptr, const int64_t[::1] adj_nbr,
                  const int64_t[::1] adj_t,
                  const int64_t[::1] nbr_indptr, const int64_t[::1] nbr_set,
                  const int64_t[::1] starts, int64_t length,
                  const double[:, ::1] uniforms, bint two_hop):
    cdef Py_ssize_t n_walks = starts.shape[0]
    cdef Py_ssize_t n_nodes = indptr.shape[0] - 1
    nodes_arr = np.full((n_walks, length + 1), -1, dtype=np.int64)
    times_arr = np.zeros((n_walks, length), dtype=np.int64)
    steps_arr = np.zeros(n_walks, dtype=np.int64)
    stamp_arr = np.full(n_nodes, -1, dtype=np.int64)
    cdef int64_t[:, ::1] nodes = nodes_arr
    cdef int64_t[:, ::1] times = times_arr
    cdef int64_t[::1] steps = steps_arr
    cdef int64_t[::1] stamp = stamp_arr
    cdef Py_ssize_t i
    cdef int64_t s, cur, lo, hi, e, a, b, cnt, pick, seen, chosen

    with nogil:
        for i in range(n_walks):
            cur = starts[i]
            nodes[i, 0] = cur
            if two_hop:
                stamp[cur] = i
                for a in range(nbr_indptr[cur], nbr_indptr[cur + 1]):
                    stamp[nbr_set[a]] = i
                    for b in range(nbr_indptr[nbr_set[a]], nbr_indptr[nbr_set[a] + 1]):
                        stamp[nbr_set[b]] = i
            for s in range(length):
                lo = indptr[cur]
                hi = indptr[cur + 1]
                if two_hop:
                    cnt = 0
                    for e in range(lo, hi):
                        if stamp[adj_nbr[e]] == i:
                            cnt += 1
                else:
                    cnt = hi - lo
                if cnt == 0:
                    break
                pick = <int64_t>(uniforms[i, s] * cnt)
                if pick >= cnt:
                    pick = cnt - 1
                if two_hop:
                    seen = 0
                    chosen = -1
                    for e in range(lo, hi):
                        if stamp[adj_nbr[e]] == i:
                            if seen == pick:
                                chosen = e
                                break
                            seen += 1
                else:
                    chosen = lo + pick
                cur = adj_nbr[chosen]
                nodes[i, s + 1] = cur
                times[i, s] = adj_t[chosen]
                steps[i] = s + 1
    return nodes_arr, times_arr, steps_arr


# numpy's vectorised tanh outruns a scalar libm loop here, so the forward
# cell is shared with the numpy backend; only the backward is fused.
from ._kernels_py import cell_forward


def cell_backward(const double[:, ::1] dh, double[:, ::1] dc, const double[:, ::1] act,
                  const double[:, ::1] tanh_c, const double[:, ::1] c_prev, double[:, ::1] dg):
    """``dc`` holds the incoming cell gradient and is overwritten with d c_prev."""
    cdef Py_ssize_t a = dh.shape[0], d = dh.shape[1], r, j
    cdef double i_g, f_g, c_g, o_g, tc, dcell, dhj
    with nogil:
        for r in range(a):
            for j in range(d):
                i_g = act[r, j]
                f_g = act[r, d + j]
                c_g = act[r, 2 * d + j]
                o_g = act[r, 3 * d + j]
                tc = tanh_c[r, j]
                dhj = dh[r, j]
                dcell = dc[r, j] + dhj * o_g * (1.0 - tc * tc)
                dg[r, j] = dcell * c_g * i_g * (1.0 - i_g)
                dg[r, d + j] = dcell * c_prev[r, j] * f_g * (1.0 - f_g)
                dg[r, 2 * d + j] = dcell * i_g * (1.0 - c_g * c_g)
                dg[r, 3 * d + j] = dhj * tc * o_g * (1.0 - o_g)
                dc[r, j] = dcell * f_g
