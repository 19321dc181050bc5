"""Neural building blocks of the attentional LSTM-CNN, as functions over tensors.

Every function takes its parameters as a small record plus input tensors and
returns new tensors; the only mutation anywhere is the running-statistics
update of :func:`batch_norm` in train mode.

Sequence batches are ``[B, T, C]`` with valid positions forming a prefix of
each row; ``lengths[b]`` is the number of valid positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as tn
from .errors import ConfigError, ContractError, DimensionError, OutOfVocabularyError, SequenceTooShortError
from .tensor import Tensor

GATES = ("i", "f", "q", "o")


@dataclass
class EmbeddingParams:
    table: Tensor  # [V, d]; row 0 is PAD


@dataclass
class LstmParams:
    W_i: Tensor
    W_f: Tensor
    W_q: Tensor
    W_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_q: Tensor
    b_o: Tensor

    @property
    def hidden(self):
        return self.W_i.shape[0]

    @property
    def input_dim(self):
        return self.W_i.shape[1] - self.W_i.shape[0]

    def weights(self):
        return [self.W_i, self.W_f, self.W_q, self.W_o]

    def biases(self):
        return [self.b_i, self.b_f, self.b_q, self.b_o]


@dataclass
class AttentionParams:
    w: Tensor  # [2k]
    b: Tensor  # scalar


@dataclass
class ConvBank:
    width: int
    filters: Tensor  # [F, width, C]
    bias: Tensor  # [F]


@dataclass
class ConvParams:
    banks: list


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.9
    epsilon: float = 1e-5


@dataclass
class DenseParams:
    W: Tensor  # [out, in]
    b: Tensor  # [out]


def time_mask(lengths, T):
    """Boolean ``[B, T]`` mask of valid positions."""
    lengths = np.asarray(lengths)
    if lengths.ndim != 1:
        raise DimensionError(f"lengths must be 1-d, got shape {lengths.shape}")
    if np.any(lengths < 1):
        raise ContractError("zero-length sequence in batch")
    if np.any(lengths > T):
        raise ContractError(f"length {lengths.max()} exceeds padded length {T}")
    return np.arange(T)[None, :] < lengths[:, None]


def reversal_index(lengths, T):
    """Index reversing each row's valid prefix and fixing the PAD tail in place."""
    lengths = np.asarray(lengths)[:, None]
    t = np.arange(T)[None, :]
    return np.where(t < lengths, lengths - 1 - t, t)


# -- embedding -------------------------------------------------------------


def embed(params: EmbeddingParams, ids) -> Tensor:
    ids = np.asarray(ids)
    V = params.table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)][0]
        raise OutOfVocabularyError(f"token id {bad} outside vocabulary of size {V}")
    return tn.take_rows(params.table, ids)


# -- recurrent -------------------------------------------------------------


def lstm_cell_step(params: LstmParams, h_prev: Tensor, c_prev: Tensor, x_t: Tensor):
    """One LSTM step on ``[h_prev, x_t]``; returns ``(h_t, c_t)``."""
    k, d = params.hidden, params.input_dim
    if h_prev.shape[1:] != (k,) or c_prev.shape != h_prev.shape or x_t.shape != (h_prev.shape[0], d):
        raise DimensionError(
            f"lstm_cell_step: h {h_prev.shape}, c {c_prev.shape}, x {x_t.shape} vs hidden={k}, input={d}"
        )
    hx = tn.concat([h_prev, x_t], axis=1)

    def gate(W, b):
        return tn.add(tn.matmul(hx, tn.transpose(W)), b)

    i = tn.sigmoid(gate(params.W_i, params.b_i))
    f = tn.sigmoid(gate(params.W_f, params.b_f))
    q = tn.tanh(gate(params.W_q, params.b_q))
    o = tn.sigmoid(gate(params.W_o, params.b_o))
    c = tn.add(tn.mul(f, c_prev), tn.mul(i, q))
    h = tn.mul(o, tn.tanh(c))
    return h, c


def _lstm_unrolled(params: LstmParams, x: Tensor, mask):
    B, T, _ = x.shape
    k = params.hidden
    h = Tensor(np.zeros((B, k), dtype=x.dtype))
    c = Tensor(np.zeros((B, k), dtype=x.dtype))
    outs = []
    for t in range(T):
        h, c = lstm_cell_step(params, h, c, tn.index(x, (slice(None), t)))
        m = Tensor(mask[:, t, None].astype(x.dtype))
        outs.append(tn.reshape(tn.mul(h, m), (B, 1, k)))
    return tn.concat(outs, axis=1)


def _lstm_fused(params: LstmParams, x: Tensor, mask):
    W = np.concatenate([w.data for w in params.weights()], axis=0).astype(x.dtype, copy=False)
    b = np.concatenate([v.data for v in params.biases()]).astype(x.dtype, copy=False)
    fmask = mask.astype(x.dtype)
    H, C, G, Hraw = kernels.lstm_forward(x.data, W, b, fmask)

    def _bw(g):
        dx, dW, db = kernels.lstm_backward(g, x.data, W, fmask, C, G, Hraw)
        return (dx, *np.split(dW, 4, axis=0), *np.split(db, 4))

    return tn.make_op(H, (x, *params.weights(), *params.biases()), _bw, "lstm_sequence")


def lstm_forward(params: LstmParams, x: Tensor, lengths, reverse=False, fused=True) -> Tensor:
    """One LSTM direction over ``x [B, T, d]`` from a zero state.

    With ``reverse`` the recurrence runs over each row's valid prefix backwards,
    so PAD never enters it. Outputs at PAD positions are zero. ``fused`` selects
    the compiled sequence kernel; otherwise the sequence is unrolled through
    :func:`lstm_cell_step` on the autodiff graph.
    """
    B, T, d = x.shape
    if d != params.input_dim:
        raise DimensionError(f"lstm_forward: input width {d} but parameters expect {params.input_dim}")
    mask = time_mask(lengths, T)
    run = _lstm_fused if fused else _lstm_unrolled
    if not reverse:
        return run(params, x, mask)
    idx = reversal_index(lengths, T)
    return tn.reindex_time(run(params, tn.reindex_time(x, idx), mask), idx)


def bilstm_forward(fwd: LstmParams, bwd: LstmParams, x: Tensor, lengths, fused=True) -> Tensor:
    """Forward and backward LSTM outputs concatenated per position: ``[B, T, 2k]``."""
    h_f = lstm_forward(fwd, x, lengths, reverse=False, fused=fused)
    h_b = lstm_forward(bwd, x, lengths, reverse=True, fused=fused)
    return tn.concat([h_f, h_b], axis=2)


# -- attention -------------------------------------------------------------


def attention_forward(params: AttentionParams, h: Tensor, lengths):
    """Position-wise attention re-weighting.

    Scores are ``w . tanh(h_i) + b``, normalized by a softmax over the valid
    positions of each row (PAD gets weight exactly 0). Returns the rescaled
    sequence ``r_i = alpha_i * h_i`` and the weights ``alpha [B, T]``.
    """
    B, T, W2 = h.shape
    if params.w.shape != (W2,):
        raise DimensionError(f"attention: w has shape {params.w.shape}, hidden width is {W2}")
    mask = time_mask(lengths, T)
    m = tn.tanh(h)
    scores = tn.matmul(tn.reshape(m, (B * T, W2)), tn.reshape(params.w, (W2, 1)))
    scores = tn.add(tn.reshape(scores, (B, T)), params.b)
    alpha = tn.softmax(scores, axis=1, mask=mask)
    r = tn.mul(h, tn.reshape(alpha, (B, T, 1)))
    return r, alpha


# -- convolution and pooling -----------------------------------------------


def conv1d_bank(bank: ConvBank, r: Tensor) -> Tensor:
    B, T, Cin = r.shape
    F, width, C = bank.filters.shape
    if C != Cin:
        raise DimensionError(f"conv width-{width} bank expects {C} channels, got {Cin}")
    if T < width:
        raise SequenceTooShortError(f"sequence length T={T} is shorter than kernel width {width}")
    L = T - width + 1
    windows = tn.reshape(tn.unfold(r, width), (B * L, width * C))
    flat_filters = tn.reshape(bank.filters, (F, width * C))
    s = tn.add(tn.matmul(windows, tn.transpose(flat_filters)), bank.bias)
    return tn.reshape(tn.relu(s), (B, L, F))


def conv1d_forward(params: ConvParams, r: Tensor):
    """Valid 1-D convolution + ReLU for every bank; one ``[B, T-width+1, F]`` map each."""
    return [conv1d_bank(bank, r) for bank in params.banks]


def global_avg_pool(x: Tensor, valid_len) -> Tensor:
    """Per-channel mean over the first ``valid_len[b]`` positions of each row."""
    B, L, _ = x.shape
    valid_len = np.asarray(valid_len)
    mask = time_mask(valid_len, L).astype(x.dtype)[:, :, None]
    total = tn.sum(tn.mul(x, Tensor(mask)), axis=1)
    inv = (1.0 / valid_len.astype(np.float64)).astype(x.dtype)[:, None]
    return tn.mul(total, Tensor(inv))


# -- classifier pieces -----------------------------------------------------


def dense(W: Tensor, b: Tensor, x: Tensor, act: str = "none") -> Tensor:
    if W.ndim != 2 or x.ndim != 2 or W.shape[1] != x.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(f"dense: W {W.shape}, b {b.shape}, x {x.shape}")
    y = tn.add(tn.matmul(x, tn.transpose(W)), b)
    if act == "relu":
        return tn.relu(y)
    if act != "none":
        raise ValueError(f"unknown dense activation {act!r}")
    return y


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with prob ``rate`` and rescales survivors."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return tn.mul(x, Tensor(mask))


def batch_norm(params: BatchNormParams, x: Tensor, mode: str) -> Tensor:
    """Batch normalization over axis 0 of ``x [B, width]``.

    Train mode normalizes with the (biased) batch statistics and folds them
    into the running estimates, ``running = momentum * running + (1 - momentum)
    * batch`` with the unbiased batch variance. Infer mode uses the running
    estimates.
    """
    B = x.shape[0]
    dt = x.dtype
    gamma, beta = params.gamma, params.beta
    eps = params.epsilon
    if mode == "train":
        if B < 2:
            raise ContractError("batch_norm in train mode needs at least 2 rows")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        m = params.momentum
        rm, rv = params.running_mean, params.running_var
        rm.data = (m * rm.data + (1 - m) * mu).astype(rm.dtype)
        rv.data = (m * rv.data + (1 - m) * var * (B / (B - 1))).astype(rv.dtype)
    elif mode == "infer":
        mu = params.running_mean.data.astype(dt)
        var = params.running_var.data.astype(dt)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dt)
    xhat = (x.data - mu) * inv_std
    y = gamma.data * xhat + beta.data
    g_data = gamma.data

    def _bw(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        if not x.requires_grad:
            return None, dgamma, dbeta
        dxhat = g * g_data
        if mode == "train":
            dx = inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return tn.make_op(y.astype(dt, copy=False), (x, gamma, beta), _bw, "batch_norm")
