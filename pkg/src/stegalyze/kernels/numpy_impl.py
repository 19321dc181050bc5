"""Pure-numpy versions of the hot kernels.

Shapes follow the rest of the package: batches are ``[B, T, C]``, LSTM
weights are stacked gate-major as ``[4k, k + d]`` in the order input, forget,
candidate, output, and each weight row multiplies ``[h_prev, x_t]``.
"""
import numpy as np

CLAMP = 30.0


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-np.clip(a, -CLAMP, CLAMP)))


def lstm_forward(x, W, b, mask):
    """Run one LSTM direction over the whole sequence from a zero state.

    Returns ``(H, C, G, Hraw)``: masked outputs, cell states, activated gates
    ``[B, T, 4k]`` and the unmasked hidden states needed by the backward pass.
    Positions with ``mask == 0`` must form a suffix of each row; their outputs
    are zero and nothing at a valid position depends on them.
    """
    B, T, d = x.shape
    k = W.shape[0] // 4
    dt = x.dtype
    Wh = np.ascontiguousarray(W[:, :k].T)
    xproj = np.empty((B, T, 4 * k), dtype=dt)
    for t in range(T):
        xproj[:, t] = x[:, t] @ W[:, k:].T
    xproj += b

    G = np.empty((B, T, 4 * k), dtype=dt)
    C = np.empty((B, T, k), dtype=dt)
    Hraw = np.empty((B, T, k), dtype=dt)
    h = np.zeros((B, k), dtype=dt)
    c = np.zeros((B, k), dtype=dt)
    for t in range(T):
        a = xproj[:, t] + h @ Wh
        g = G[:, t]
        g[:, : 2 * k] = _sigmoid(a[:, : 2 * k])
        g[:, 2 * k : 3 * k] = np.tanh(np.clip(a[:, 2 * k : 3 * k], -CLAMP, CLAMP))
        g[:, 3 * k :] = _sigmoid(a[:, 3 * k :])
        c = g[:, k : 2 * k] * c + g[:, :k] * g[:, 2 * k : 3 * k]
        h = g[:, 3 * k :] * np.tanh(c)
        C[:, t] = c
        Hraw[:, t] = h
    H = Hraw * mask[:, :, None].astype(dt)
    return H, C, G, Hraw


def lstm_backward(dH, x, W, mask, C, G, Hraw):
    """Backpropagation through time for :func:`lstm_forward`.

    Returns ``(dx, dW, db)``.
    """
    B, T, d = x.shape
    k = W.shape[0] // 4
    dt = x.dtype
    Wh = W[:, :k]
    dHm = dH * mask[:, :, None].astype(dt)
    dA = np.empty((B, T, 4 * k), dtype=dt)
    dh_next = np.zeros((B, k), dtype=dt)
    dc_next = np.zeros((B, k), dtype=dt)
    zero = np.zeros((B, k), dtype=dt)
    for t in range(T - 1, -1, -1):
        g = G[:, t]
        i, f, q, o = g[:, :k], g[:, k : 2 * k], g[:, 2 * k : 3 * k], g[:, 3 * k :]
        tc = np.tanh(C[:, t])
        c_prev = C[:, t - 1] if t > 0 else zero
        dh = dHm[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tc * tc)
        da = dA[:, t]
        da[:, :k] = dc * q * i * (1 - i)
        da[:, k : 2 * k] = dc * c_prev * f * (1 - f)
        da[:, 2 * k : 3 * k] = dc * i * (1 - q * q)
        da[:, 3 * k :] = dh * tc * o * (1 - o)
        dc_next = dc * f
        dh_next = da @ Wh

    dW = np.zeros_like(W)
    flat = dA.reshape(B * T, 4 * k)
    dW[:, k:] = flat.T @ x.reshape(B * T, d)
    if T > 1:
        dW[:, :k] = dA[:, 1:].reshape(-1, 4 * k).T @ Hraw[:, :-1].reshape(-1, k)
    db = flat.sum(axis=0)
    dx = (flat @ W[:, k:]).reshape(B, T, d)
    return dx, dW, db


def unfold(x, width):
    """Sliding windows ``[B, T, C] -> [B, T - width + 1, width * C]``.

    Each window is flattened position-major, so entry ``j * C + c`` is channel
    ``c`` of the ``j``-th frame in the window.
    """
    B, T, C = x.shape
    L = T - width + 1
    out = np.empty((B, L, width, C), dtype=x.dtype)
    for j in range(width):
        out[:, :, j, :] = x[:, j : j + L, :]
    return out.reshape(B, L, width * C)


def fold(g, width, T):
    """Adjoint of :func:`unfold`: scatter-add window gradients back to frames."""
    B, L, WC = g.shape
    C = WC // width
    g4 = g.reshape(B, L, width, C)
    out = np.zeros((B, T, C), dtype=g.dtype)
    for j in range(width):
        out[:, j : j + L, :] += g4[:, :, j, :]
    return out


def scatter_add_rows(n_rows, ids, values):
    """``out[ids[n]] += values[n]`` for a flat id vector; returns ``[n_rows, C]``."""
    out = np.zeros((n_rows, values.shape[1]), dtype=values.dtype)
    np.add.at(out, ids, values)
    return out
