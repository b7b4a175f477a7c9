"""Pure-Python/numpy kernels, used when the compiled ``_kernels`` is absent.

The walk samplers follow the same floating-point operation order as the
Cython version, so both produce identical walks from identical uniforms.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right

import numpy as np


def _adjacent(nbr_indptr, nbr_set, u, v):
    lo, hi = nbr_indptr[u], nbr_indptr[u + 1]
    i = bisect_left(nbr_set, v, lo, hi)
    return i < hi and nbr_set[i] == v


def temporal_walks(indptr, adj_nbr, adj_t, adj_w, nbr_indptr, nbr_set,
                   starts, t_refs, p, q, tau, length, uniforms):
    n_walks = len(starts)
    nodes_arr = np.full((n_walks, length + 1), -1, dtype=np.int64)
    times_arr = np.zeros((n_walks, length), dtype=np.int64)
    steps_arr = np.zeros(n_walks, dtype=np.int64)
    indptr, adj_nbr, adj_t, adj_w = indptr.tolist(), adj_nbr.tolist(), adj_t.tolist(), adj_w.tolist()
    nbr_indptr, nbr_set = nbr_indptr.tolist(), nbr_set.tolist()
    inv_p, inv_q = 1.0 / p, 1.0 / q
    tau = float(tau)

    def mass(nxt, prev, w, t, t_last):
        if prev < 0:
            beta = 1.0
        elif nxt == prev:
            beta = inv_p
        elif _adjacent(nbr_indptr, nbr_set, prev, nxt):
            beta = 1.0
        else:
            beta = inv_q
        return beta * w * math.exp(-float(t_last - t) / tau)

    for i in range(n_walks):
        cur = int(starts[i])
        prev = -1
        t_in = int(t_refs[i])
        row_u = uniforms[i]
        nodes_arr[i, 0] = cur
        for s in range(length):
            lo = indptr[cur]
            if s == 0:
                hi = bisect_left(adj_t, t_in, lo, indptr[cur + 1])
            else:
                hi = bisect_right(adj_t, t_in, lo, indptr[cur + 1])
            if hi == lo:
                break
            t_last = adj_t[hi - 1]
            masses = [mass(adj_nbr[e], prev, adj_w[e], adj_t[e], t_last) for e in range(lo, hi)]
            total = 0.0
            for m in masses:
                total += m
            if not total > 0.0:
                break
            target = float(row_u[s]) * total
            acc = 0.0
            chosen = -1
            for e, m in zip(range(lo, hi), masses):
                if m > 0.0:
                    chosen = e
                acc += m
                if acc > target and m > 0.0:
                    break
            prev = cur
            cur = adj_nbr[chosen]
            t_in = adj_t[chosen]
            nodes_arr[i, s + 1] = cur
            times_arr[i, s] = t_in
            steps_arr[i] = s + 1
    return nodes_arr, times_arr, steps_arr


def uniform_walks(indptr, adj_nbr, adj_t, nbr_indptr, nbr_set, starts, length, uniforms, two_hop):
    n_walks = len(starts)
    nodes_arr = np.full((n_walks, length + 1), -1, dtype=np.int64)
    times_arr = np.zeros((n_walks, length), dtype=np.int64)
    steps_arr = np.zeros(n_walks, dtype=np.int64)
    indptr, adj_nbr, adj_t = indptr.tolist(), adj_nbr.tolist(), adj_t.tolist()
    nbr_indptr, nbr_set = nbr_indptr.tolist(), nbr_set.tolist()

    for i in range(n_walks):
        cur = int(starts[i])
        nodes_arr[i, 0] = cur
        allowed = None
        if two_hop:
            allowed = {cur}
            for a in range(nbr_indptr[cur], nbr_indptr[cur + 1]):
                nb = nbr_set[a]
                allowed.add(nb)
                allowed.update(nbr_set[nbr_indptr[nb]:nbr_indptr[nb + 1]])
        for s in range(length):
            lo, hi = indptr[cur], indptr[cur + 1]
            if allowed is None:
                cand = range(lo, hi)
            else:
                cand = [e for e in range(lo, hi) if adj_nbr[e] in allowed]
            cnt = len(cand)
            if cnt == 0:
                break
            pick = min(int(float(uniforms[i, s]) * cnt), cnt - 1)
            chosen = cand[pick]
            cur = adj_nbr[chosen]
            nodes_arr[i, s + 1] = cur
            times_arr[i, s] = adj_t[chosen]
            steps_arr[i] = s + 1
    return nodes_arr, times_arr, steps_arr


def cell_forward(g, c_prev, c_out, tanh_c_out, h_out):
    """In place: ``g`` (a, 4d) pre-activations become gate activations."""
    d = c_prev.shape[1]
    # sigmoid(x) = (tanh(x / 2) + 1) / 2 on the i, f, o blocks
    g[:, :2 * d] *= 0.5
    g[:, 3 * d:] *= 0.5
    np.tanh(g, out=g)
    g[:, :2 * d] += 1.0
    g[:, :2 * d] *= 0.5
    g[:, 3 * d:] += 1.0
    g[:, 3 * d:] *= 0.5
    np.multiply(g[:, d:2 * d], c_prev, out=c_out)
    c_out += g[:, :d] * g[:, 2 * d:3 * d]
    np.tanh(c_out, out=tanh_c_out)
    np.multiply(g[:, 3 * d:], tanh_c_out, out=h_out)


def cell_backward(dh, dc, act, tanh_c, c_prev, dg):
    d = dh.shape[1]
    i_g, f_g, c_g, o_g = act[:, :d], act[:, d:2 * d], act[:, 2 * d:3 * d], act[:, 3 * d:]
    dcell = dc + dh * o_g * (1.0 - tanh_c * tanh_c)
    dg[:, :d] = dcell * c_g * i_g * (1.0 - i_g)
    dg[:, d:2 * d] = dcell * c_prev * f_g * (1.0 - f_g)
    dg[:, 2 * d:3 * d] = dcell * i_g * (1.0 - c_g * c_g)
    dg[:, 3 * d:] = dh * tanh_c * o_g * (1.0 - o_g)
    np.multiply(dcell, f_g, out=dc)
