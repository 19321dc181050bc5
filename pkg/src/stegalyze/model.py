"""The attentional LSTM-CNN classifier and its ablation variants.

Variants, from the plain baseline to the full model:

========================  ==================================================
``LSTM_CNN``              unidirectional LSTM -> conv banks -> pooled conv
``BILSTM_CNN``            adds the backward LSTM direction
``BILSTM_CNN_ATT``        inserts position-wise attention before the convs
``BILSTM_CNN_ATT_CL``     also concatenates the pooled attended Bi-LSTM
                          sequence with the pooled conv features
========================  ==================================================
"""
from __future__ import annotations

import copy
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import layers
from . import tensor as tn
from .errors import ConfigError, NumericFailure
from .layers import (
    AttentionParams,
    BatchNormParams,
    ConvBank,
    ConvParams,
    DenseParams,
    EmbeddingParams,
    LstmParams,
)
from .rng import RngState
from .tensor import Tensor

VARIANTS = ("LSTM_CNN", "BILSTM_CNN", "BILSTM_CNN_ATT", "BILSTM_CNN_ATT_CL")
VARIANT_LABELS = {
    "LSTM_CNN": "LSTM+CNN",
    "BILSTM_CNN": "Bi-LSTM+CNN",
    "BILSTM_CNN_ATT": "Bi-LSTM+CNN+ATT",
    "BILSTM_CNN_ATT_CL": "Bi-LSTM+CNN+ATT+CL",
}
_LABEL_TO_VARIANT = {v.lower(): k for k, v in VARIANT_LABELS.items()}


def parse_variant(name: str) -> str:
    """Accept either the identifier (``BILSTM_CNN``) or the table label (``Bi-LSTM+CNN``)."""
    if name in VARIANTS:
        return name
    key = name.strip().lower()
    if key in _LABEL_TO_VARIANT:
        return _LABEL_TO_VARIANT[key]
    if key.upper() in VARIANTS:
        return key.upper()
    raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANT_LABELS.values())}")


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 256
    hidden: int = 200
    kernel_widths: tuple = (3, 4, 5)
    feature_maps: int = 128
    fc_dim: int = 100
    n_classes: int = 2
    dropout_rate: float = 0.5
    variant: str = "BILSTM_CNN_ATT_CL"
    max_seq_len: int = 30

    def __post_init__(self):
        self.kernel_widths = tuple(int(w) for w in self.kernel_widths)
        self.variant = parse_variant(self.variant)
        for name in ("vocab_size", "embed_dim", "hidden", "feature_maps", "fc_dim", "n_classes", "max_seq_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be at least 2 (PAD and UNK)")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if not self.kernel_widths or min(self.kernel_widths) < 1:
            raise ConfigError(f"kernel widths must be positive, got {self.kernel_widths}")
        if len(set(self.kernel_widths)) != len(self.kernel_widths):
            raise ConfigError(f"duplicate kernel widths {self.kernel_widths}")
        if max(self.kernel_widths) > self.max_seq_len:
            raise ConfigError(
                f"largest kernel width {max(self.kernel_widths)} exceeds max_seq_len {self.max_seq_len}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def bidirectional(self):
        return self.variant != "LSTM_CNN"

    @property
    def attention(self):
        return self.variant in ("BILSTM_CNN_ATT", "BILSTM_CNN_ATT_CL")

    @property
    def concat_recurrent(self):
        return self.variant == "BILSTM_CNN_ATT_CL"

    @property
    def recurrent_width(self):
        return 2 * self.hidden if self.bidirectional else self.hidden

    @property
    def fused_dim(self):
        conv = len(self.kernel_widths) * self.feature_maps
        return conv + self.recurrent_width if self.concat_recurrent else conv

    @property
    def min_len(self):
        return max(self.kernel_widths)

    def to_dict(self):
        d = asdict(self)
        d["kernel_widths"] = list(self.kernel_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelParams:
    embedding: EmbeddingParams
    lstm_fwd: LstmParams
    conv: ConvParams
    bn: BatchNormParams
    fc: DenseParams
    out: DenseParams
    lstm_bwd: Optional[LstmParams] = None
    attention: Optional[AttentionParams] = None

    def named_tensors(self) -> "OrderedDict[str, Tensor]":
        named = OrderedDict()
        named["embedding.table"] = self.embedding.table
        for prefix, lp in (("lstm_fwd", self.lstm_fwd), ("lstm_bwd", self.lstm_bwd)):
            if lp is None:
                continue
            for g in layers.GATES:
                named[f"{prefix}.W_{g}"] = getattr(lp, f"W_{g}")
            for g in layers.GATES:
                named[f"{prefix}.b_{g}"] = getattr(lp, f"b_{g}")
        if self.attention is not None:
            named["attention.w"] = self.attention.w
            named["attention.b"] = self.attention.b
        for bank in self.conv.banks:
            named[f"conv.{bank.width}.filters"] = bank.filters
            named[f"conv.{bank.width}.bias"] = bank.bias
        named["bn.gamma"] = self.bn.gamma
        named["bn.beta"] = self.bn.beta
        named["bn.running_mean"] = self.bn.running_mean
        named["bn.running_var"] = self.bn.running_var
        named["fc.W"] = self.fc.W
        named["fc.b"] = self.fc.b
        named["out.W"] = self.out.W
        named["out.b"] = self.out.b
        return named

    def trainable(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((n, t) for n, t in self.named_tensors().items() if t.requires_grad)

    def n_parameters(self) -> int:
        return int(np.sum([t.size for t in self.trainable().values()]))

    def copy(self) -> "ModelParams":
        clone = copy.deepcopy(self)
        clone.zero_grad()
        return clone

    def astype(self, dtype) -> "ModelParams":
        """Deep copy with every tensor cast to ``dtype`` (used for float64 gradient checks)."""
        clone = self.copy()
        for t in clone.named_tensors().values():
            t.data = t.data.astype(dtype)
            t.grad = None
        return clone

    def zero_grad(self):
        for t in self.named_tensors().values():
            t.grad = None

    def check_finite(self):
        for name, t in self.named_tensors().items():
            if not np.all(np.isfinite(t.data)):
                raise NumericFailure(f"parameter {name} contains NaN or Inf")


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple]":
    """Name -> shape of every tensor a model with ``config`` carries, in file order."""
    k, d = config.hidden, config.embed_dim
    shapes = OrderedDict()
    shapes["embedding.table"] = (config.vocab_size, d)
    dirs = ("lstm_fwd", "lstm_bwd") if config.bidirectional else ("lstm_fwd",)
    for prefix in dirs:
        for g in layers.GATES:
            shapes[f"{prefix}.W_{g}"] = (k, k + d)
        for g in layers.GATES:
            shapes[f"{prefix}.b_{g}"] = (k,)
    if config.attention:
        shapes["attention.w"] = (config.recurrent_width,)
        shapes["attention.b"] = ()
    for w in config.kernel_widths:
        shapes[f"conv.{w}.filters"] = (config.feature_maps, w, config.recurrent_width)
        shapes[f"conv.{w}.bias"] = (config.feature_maps,)
    for name in ("gamma", "beta", "running_mean", "running_var"):
        shapes[f"bn.{name}"] = (config.fused_dim,)
    shapes["fc.W"] = (config.fc_dim, config.fused_dim)
    shapes["fc.b"] = (config.fc_dim,)
    shapes["out.W"] = (config.n_classes, config.fc_dim)
    shapes["out.b"] = (config.n_classes,)
    return shapes


def init_limit(name: str, shape) -> Optional[float]:
    """Glorot-uniform bound for weight tensors; ``None`` for tensors with fixed init."""
    if name == "embedding.table" or name.endswith(".W") or ".W_" in name:
        fan_out, fan_in = shape
    elif name.endswith(".filters"):
        fan_out, fan_in = shape[0], shape[1] * shape[2]
    elif name == "attention.w":
        fan_in, fan_out = shape[0], 1
    else:
        return None
    return math.sqrt(6.0 / (fan_in + fan_out))


def _fixed_init(name, shape):
    if name in ("bn.gamma", "bn.running_var"):
        return np.ones(shape)
    if name.endswith(".b_f"):
        return np.ones(shape)
    return np.zeros(shape)


def build_params(config: ModelConfig, arrays) -> ModelParams:
    """Assemble a :class:`ModelParams` from a name -> array mapping."""

    def t(name):
        trainable = not name.startswith("bn.running")
        return Tensor(arrays[name], requires_grad=trainable, dtype=np.asarray(arrays[name]).dtype)

    def lstm(prefix):
        return LstmParams(
            **{f"W_{g}": t(f"{prefix}.W_{g}") for g in layers.GATES},
            **{f"b_{g}": t(f"{prefix}.b_{g}") for g in layers.GATES},
        )

    return ModelParams(
        embedding=EmbeddingParams(t("embedding.table")),
        lstm_fwd=lstm("lstm_fwd"),
        lstm_bwd=lstm("lstm_bwd") if config.bidirectional else None,
        attention=AttentionParams(t("attention.w"), t("attention.b")) if config.attention else None,
        conv=ConvParams(
            [ConvBank(w, t(f"conv.{w}.filters"), t(f"conv.{w}.bias")) for w in config.kernel_widths]
        ),
        bn=BatchNormParams(t("bn.gamma"), t("bn.beta"), t("bn.running_mean"), t("bn.running_var")),
        fc=DenseParams(t("fc.W"), t("fc.b")),
        out=DenseParams(t("out.W"), t("out.b")),
    )


def init_params(config: ModelConfig, rng: RngState, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, forget-gate bias 1, identity batch norm."""
    gen = rng.stream("init")
    arrays = {}
    for name, shape in param_shapes(config).items():
        limit = init_limit(name, shape)
        if limit is None:
            arr = _fixed_init(name, shape)
        else:
            arr = gen.uniform(-limit, limit, size=shape)
        arrays[name] = arr.astype(dtype)
    arrays["embedding.table"][0] = 0  # PAD row
    return build_params(config, arrays)


def _check(name, t: Tensor):
    if not np.all(np.isfinite(t.data)):
        raise NumericFailure(f"non-finite activations after layer '{name}'")
    return t


def uniform_alpha(lengths, T, dtype=np.float32):
    mask = layers.time_mask(lengths, T)
    return (mask / np.asarray(lengths)[:, None]).astype(dtype)


def forward(config: ModelConfig, params: ModelParams, batch, mode="infer", rng=None, fused=True):
    """Class probabilities ``[B, n_classes]`` and attention weights ``[B, T]``.

    ``batch`` needs ``ids [B, T]`` and ``lengths [B]``; every length must be at
    least the largest kernel width. ``rng`` is the dropout generator and is
    only consulted in train mode. Variants without attention return uniform
    weights over the valid positions.
    """
    ids = np.asarray(batch.ids)
    lengths = np.asarray(batch.lengths)
    B, T = ids.shape
    if np.any(lengths < config.min_len):
        raise layers.SequenceTooShortError(
            f"sequence of length {lengths.min()} shorter than kernel width {config.min_len}"
        )
    if mode == "train" and config.dropout_rate > 0 and rng is None:
        raise ValueError("train mode needs a dropout generator")

    x = _check("embedding", layers.embed(params.embedding, ids))
    if config.bidirectional:
        h = layers.bilstm_forward(params.lstm_fwd, params.lstm_bwd, x, lengths, fused=fused)
    else:
        h = layers.lstm_forward(params.lstm_fwd, x, lengths, fused=fused)
    _check("lstm", h)

    if config.attention:
        r, alpha = layers.attention_forward(params.attention, h, lengths)
        _check("attention", r)
        alpha_values = alpha.data
    else:
        r = h
        alpha_values = uniform_alpha(lengths, T, x.dtype)

    pooled = []
    if config.concat_recurrent:
        pooled.append(layers.global_avg_pool(r, lengths))
    for bank in params.conv.banks:
        fmap = _check(f"conv{bank.width}", layers.conv1d_bank(bank, r))
        pooled.append(layers.global_avg_pool(fmap, lengths - bank.width + 1))
    z = tn.concat(pooled, axis=1)

    z = _check("batch_norm", layers.batch_norm(params.bn, z, mode))
    a = _check("fc", layers.dense(params.fc.W, params.fc.b, z, act="relu"))
    a = layers.dropout(a, config.dropout_rate, mode, rng)
    logits = _check("output", layers.dense(params.out.W, params.out.b, a))
    probs = tn.softmax(logits, axis=1)
    return probs, alpha_values


def predict(config: ModelConfig, params: ModelParams, batch, fused=True):
    """Infer-mode labels and probabilities; ties resolve to the lowest class (cover)."""
    probs, _ = forward(config, params, batch, mode="infer", fused=fused)
    return labels_from_probs(probs.data), probs.data


def labels_from_probs(probs):
    # np.argmax returns the first maximal index: exact ties go to class 0
    return np.argmax(np.asarray(probs), axis=1)
