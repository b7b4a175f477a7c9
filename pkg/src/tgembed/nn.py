"""Numpy building blocks with hand-written backward passes.

Sequences are left-padded: row ``i`` of an ``(N, T, d)`` input holds its
``lengths[i]`` real steps at the end, so the final hidden state of every
row is read at step ``T - 1``. Padded steps keep the state at zero, which
is exactly equivalent to running each sequence on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
GATES = 4  # input, forget, candidate, output


def sigmoid(x):
    return 0.5 * np.tanh(0.5 * x) + 0.5


def init_lstm(rng: np.random.Generator, d_in: int, d: int, layers: int) -> list[dict]:
    bound = 1.0 / np.sqrt(d)
    out = []
    for layer in range(layers):
        n_in = d_in if layer == 0 else d
        out.append({
            "Wx": rng.uniform(-bound, bound, (n_in, GATES * d)),
            "Wh": rng.uniform(-bound, bound, (d, GATES * d)),
            "b": rng.uniform(-bound, bound, GATES * d),
        })
    return out


@dataclass
class _LayerCache:
    # all time-major: (T, N, .)
    x: np.ndarray
    acts: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray


@dataclass
class LSTMCache:
    order: np.ndarray
    active: np.ndarray
    layers: list


def lstm_forward(x: np.ndarray, lengths: np.ndarray, params: list[dict], backend: str | None = None):
    """Run a stacked LSTM over ``(N, T, d_in)``; returns the top layer's final hidden state."""
    N, T, _ = x.shape
    if N == 0:
        raise ValueError("empty batch")
    if np.any(lengths < 1) or np.any(lengths > T):
        raise ValueError("sequence lengths must lie in [1, T]")
    kern = _backend.get(backend)
    order = np.argsort(-lengths, kind="stable")
    lens = lengths[order]
    # rows active at step s form the prefix [0, active[s])
    active = np.searchsorted(-lens, -(T - np.arange(T)), side="right")
    inp = np.ascontiguousarray(x[order].transpose(1, 0, 2))
    zero = np.zeros((N, params[0]["Wh"].shape[0]))
    caches = []
    for p in params:
        Wx, Wh, b = p["Wx"], p["Wh"], p["b"]
        d = Wh.shape[0]
        acts = np.zeros((T, N, GATES * d))
        c = np.zeros((T, N, d))
        tanh_c = np.zeros((T, N, d))
        h = np.zeros((T, N, d))
        for s in range(T):
            a = active[s]
            if a == 0:
                continue
            g = acts[s, :a]
            np.matmul(inp[s, :a], Wx, out=g)
            g += b
            if s > 0:
                g += h[s - 1, :a] @ Wh
            kern.cell_forward(g, c[s - 1, :a] if s > 0 else zero[:a], c[s, :a], tanh_c[s, :a], h[s, :a])
        caches.append(_LayerCache(inp, acts, c, tanh_c, h))
        inp = h
    out = np.empty((N, inp.shape[2]))
    out[order] = inp[T - 1]
    return out, LSTMCache(order, active, caches)


def lstm_backward(dout: np.ndarray, cache: LSTMCache, params: list[dict], backend: str | None = None):
    """Gradients for a loss that depends on the final hidden state only.

    Returns ``(dx, grads)`` with ``dx`` shaped like the forward input.
    """
    kern = _backend.get(backend)
    order, active = cache.order, cache.active
    T, N, d = cache.layers[-1].h.shape
    dh_seq = np.zeros((T, N, d))
    dh_seq[T - 1] = dout[order]
    zero = np.zeros((N, d))
    grads = [None] * len(params)
    for li in range(len(params) - 1, -1, -1):
        p, lc = params[li], cache.layers[li]
        Wh = p["Wh"]
        dg_all = np.zeros_like(lc.acts)
        dWh = np.zeros_like(Wh)
        dh = np.zeros((N, d))
        dc = np.zeros((N, d))
        for s in range(T - 1, -1, -1):
            a = active[s]
            if a == 0:
                break
            dh[:a] += dh_seq[s, :a]
            kern.cell_backward(dh[:a], dc[:a], lc.acts[s, :a], lc.tanh_c[s, :a],
                               lc.c[s - 1, :a] if s > 0 else zero[:a], dg_all[s, :a])
            if s > 0:
                dWh += lc.h[s - 1, :a].T @ dg_all[s, :a]
                np.matmul(dg_all[s, :a], Wh.T, out=dh[:a])
        flat = dg_all.reshape(-1, GATES * d)
        x = lc.x
        grads[li] = {
            "Wx": x.reshape(-1, x.shape[2]).T @ flat,
            "Wh": dWh,
            "b": flat.sum(axis=0),
        }
        dh_seq = dg_all @ p["Wx"].T
    dx = np.empty((N, T, dh_seq.shape[2]))
    dx[order] = dh_seq.transpose(1, 0, 2)
    return dx, grads


def lstm_reference(seq: np.ndarray, params: list[dict]) -> np.ndarray:
    """Single-sequence step-by-step LSTM, no padding or batching."""
    inp = [np.asarray(v, dtype=np.float64) for v in seq]
    if not inp:
        raise ValueError("empty input sequence")
    for p in params:
        d = p["Wh"].shape[0]
        h = np.zeros(d)
        c = np.zeros(d)
        outs = []
        for v in inp:
            g = v @ p["Wx"] + h @ p["Wh"] + p["b"]
            i, f = sigmoid(g[:d]), sigmoid(g[d:2 * d])
            cand, o = np.tanh(g[2 * d:3 * d]), sigmoid(g[3 * d:])
            c = f * c + i * cand
            h = o * np.tanh(c)
            outs.append(h)
        inp = outs
    return inp[-1]


@dataclass
class BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    train: bool
    mean: np.ndarray
    var: np.ndarray


def batchnorm_forward(x: np.ndarray, gamma, beta, running_mean, running_var, train: bool):
    """Returns ``(y, cache)``; running statistics are not touched here.

    ``x`` is ``(n, d)`` or grouped ``(G, n, d)``; in train mode each group is
    normalised by its own mean and (biased) variance over the ``n`` axis,
    which are kept in the cache for :func:`updated_running_stats`.
    """
    if train:
        if x.shape[-2] < 2:
            raise ValueError("train-mode batch norm needs a batch of at least 2")
        mean = x.mean(axis=-2, keepdims=True)
        var = x.var(axis=-2, keepdims=True)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, BNCache(xhat, inv_std, train, mean, var)


def batchnorm_backward(dy: np.ndarray, cache: BNCache, gamma):
    xhat, inv_std = cache.xhat, cache.inv_std
    lead = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=lead)
    dbeta = dy.sum(axis=lead)
    dxhat = dy * gamma
    if not cache.train:
        return dxhat * inv_std, dgamma, dbeta
    n = dy.shape[-2]
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=-2, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-2, keepdims=True))
    return dx, dgamma, dbeta


def updated_running_stats(cache: BNCache, running_mean, running_var, n: int):
    """Momentum update with the unbiased batch variance.

    Grouped statistics are folded in one group at a time, in order.
    """
    unbiased = cache.var * n / max(n - 1, 1)
    means = cache.mean.reshape(-1, cache.mean.shape[-1])
    vars_ = unbiased.reshape(-1, unbiased.shape[-1])
    G = len(means)
    # weight of group i after all G updates: (1 - m) m^(G-1-i)
    w = (1 - BN_MOMENTUM) * BN_MOMENTUM ** np.arange(G - 1, -1, -1.0)
    decay = BN_MOMENTUM ** G
    return decay * running_mean + w @ means, decay * running_var + w @ vars_


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dp: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))
