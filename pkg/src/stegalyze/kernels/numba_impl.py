"""Numba-compiled versions of the hot kernels.

Same contracts as :mod:`stegalyze.kernels.numpy_impl`; the gate arithmetic is
fused into explicit loops and the matrix products go through BLAS via
``np.dot``. Inputs must be C-contiguous.
"""
import numpy as np
from numba import njit

CLAMP = 30.0


@njit(cache=True, inline="always")
def _clamp(a):
    if a > CLAMP:
        return CLAMP
    if a < -CLAMP:
        return -CLAMP
    return a


@njit(cache=True)
def lstm_forward(x, W, b, mask):
    B, T, d = x.shape
    k = W.shape[0] // 4
    Wh = np.ascontiguousarray(W[:, :k].T)
    Wx = np.ascontiguousarray(W[:, k:].T)
    G = np.empty((B, T, 4 * k), dtype=x.dtype)
    C = np.empty((B, T, k), dtype=x.dtype)
    Hraw = np.empty((B, T, k), dtype=x.dtype)
    H = np.empty((B, T, k), dtype=x.dtype)
    h = np.zeros((B, k), dtype=x.dtype)
    c = np.zeros((B, k), dtype=x.dtype)
    xt = np.empty((B, d), dtype=x.dtype)
    for t in range(T):
        for n in range(B):
            for m in range(d):
                xt[n, m] = x[n, t, m]
        a = np.dot(xt, Wx) + np.dot(h, Wh)
        for n in range(B):
            for u in range(k):
                ai = _clamp(a[n, u] + b[u])
                af = _clamp(a[n, k + u] + b[k + u])
                aq = _clamp(a[n, 2 * k + u] + b[2 * k + u])
                ao = _clamp(a[n, 3 * k + u] + b[3 * k + u])
                gi = 1.0 / (1.0 + np.exp(-ai))
                gf = 1.0 / (1.0 + np.exp(-af))
                gq = np.tanh(aq)
                go = 1.0 / (1.0 + np.exp(-ao))
                cn = gf * c[n, u] + gi * gq
                hn = go * np.tanh(cn)
                c[n, u] = cn
                h[n, u] = hn
                G[n, t, u] = gi
                G[n, t, k + u] = gf
                G[n, t, 2 * k + u] = gq
                G[n, t, 3 * k + u] = go
                C[n, t, u] = cn
                Hraw[n, t, u] = hn
                H[n, t, u] = hn * mask[n, t]
    return H, C, G, Hraw


@njit(cache=True)
def lstm_backward(dH, x, W, mask, C, G, Hraw):
    B, T, d = x.shape
    k = W.shape[0] // 4
    Wh = np.ascontiguousarray(W[:, :k])
    dA = np.empty((B, T, 4 * k), dtype=x.dtype)
    dh_next = np.zeros((B, k), dtype=x.dtype)
    dc_next = np.zeros((B, k), dtype=x.dtype)
    da = np.empty((B, 4 * k), dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        for n in range(B):
            mk = mask[n, t]
            for u in range(k):
                gi = G[n, t, u]
                gf = G[n, t, k + u]
                gq = G[n, t, 2 * k + u]
                go = G[n, t, 3 * k + u]
                tc = np.tanh(C[n, t, u])
                cp = C[n, t - 1, u] if t > 0 else 0.0
                dh = dH[n, t, u] * mk + dh_next[n, u]
                dc = dc_next[n, u] + dh * go * (1.0 - tc * tc)
                da[n, u] = dc * gq * gi * (1.0 - gi)
                da[n, k + u] = dc * cp * gf * (1.0 - gf)
                da[n, 2 * k + u] = dc * gi * (1.0 - gq * gq)
                da[n, 3 * k + u] = dh * tc * go * (1.0 - go)
                dc_next[n, u] = dc * gf
        dA[:, t, :] = da
        dh_next = np.dot(da, Wh)

    flat = dA.reshape(B * T, 4 * k)
    dW = np.zeros_like(W)
    dW[:, k:] = np.dot(flat.T.copy(), x.reshape(B * T, d))
    if T > 1:
        prev = np.ascontiguousarray(Hraw[:, :-1, :]).reshape(B * (T - 1), k)
        cur = np.ascontiguousarray(dA[:, 1:, :]).reshape(B * (T - 1), 4 * k)
        dW[:, :k] = np.dot(cur.T.copy(), prev)
    db = np.zeros(4 * k, dtype=x.dtype)
    for r in range(B * T):
        for j in range(4 * k):
            db[j] += flat[r, j]
    dx = np.dot(flat, np.ascontiguousarray(W[:, k:])).reshape(B, T, d)
    return dx, dW, db


@njit(cache=True)
def unfold(x, width):
    B, T, C = x.shape
    L = T - width + 1
    out = np.empty((B, L, width * C), dtype=x.dtype)
    for n in range(B):
        for p in range(L):
            for j in range(width):
                for ch in range(C):
                    out[n, p, j * C + ch] = x[n, p + j, ch]
    return out


@njit(cache=True)
def fold(g, width, T):
    B, L, WC = g.shape
    C = WC // width
    out = np.zeros((B, T, C), dtype=g.dtype)
    for n in range(B):
        for p in range(L):
            for j in range(width):
                for ch in range(C):
                    out[n, p + j, ch] += g[n, p, j * C + ch]
    return out


@njit(cache=True)
def scatter_add_rows(n_rows, ids, values):
    out = np.zeros((n_rows, values.shape[1]), dtype=values.dtype)
    for r in range(ids.shape[0]):
        row = ids[r]
        for c in range(values.shape[1]):
            out[row, c] += values[r, c]
    return out
