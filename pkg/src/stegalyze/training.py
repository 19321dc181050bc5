"""Loss, Adam, the mini-batch training loop and detection metrics."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, NumericFailure
from .model import ModelConfig, ModelParams, forward, init_params, labels_from_probs
from .rng import RngState
from .tensor import Tensor

log = logging.getLogger(__name__)


def cross_entropy_loss(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes; probabilities floored at 1e-12."""
    labels = np.asarray(labels)
    B, k = probs.shape
    if labels.shape != (B,):
        raise ContractError(f"labels shape {labels.shape} does not match batch of {B}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ContractError(f"label outside 0..{k - 1}")
    picked = tn.index(probs, (np.arange(B), labels))
    return tn.scale(tn.sum(tn.log(picked)), -1.0 / B)


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict):
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name in params:
        if grads.get(name) is None:
            raise ContractError(f"no gradient for parameter {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
        p.data = p.data - step
    return params, state


def clip_global_norm(grads: dict, max_norm):
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads.values()])))
    if max_norm is None or total <= max_norm or total == 0.0:
        return grads, total
    s = max_norm / total
    return {n: (g * s).astype(g.dtype) for n, g in grads.items()}, total


# -- metrics ---------------------------------------------------------------


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_undefined: bool = False
    recall_undefined: bool = False

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion_metrics(labels, preds, positive: int = 1) -> Metrics:
    """Accuracy, precision and recall with stego (label 1) as the positive class."""
    labels = np.asarray(labels)
    preds = np.asarray(preds)
    pos_l, pos_p = labels == positive, preds == positive
    tp = int(np.sum(pos_l & pos_p))
    fp = int(np.sum(~pos_l & pos_p))
    fn = int(np.sum(pos_l & ~pos_p))
    tn_ = int(np.sum(~pos_l & ~pos_p))
    total = tp + fp + fn + tn_
    if total == 0:
        raise ContractError("cannot compute metrics on an empty dataset")
    return Metrics(
        accuracy=(tp + tn_) / total,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn_,
        precision_undefined=tp + fp == 0,
        recall_undefined=tp + fn == 0,
    )


def predict_dataset(config, params, dataset, batch_size=256, threads=1, fused=True):
    """Infer-mode labels and probabilities for a whole :class:`EncodedBatch`."""
    n = len(dataset)
    chunks = [np.arange(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]

    def run(idx):
        probs, _ = forward(config, params, dataset.select(idx), mode="infer", fused=fused)
        return probs.data

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(idx) for idx in chunks]
    probs = np.concatenate(parts) if parts else np.zeros((0, config.n_classes))
    return labels_from_probs(probs), probs


def dataset_loss(config, params, dataset, batch_size=256) -> float:
    """Infer-mode mean negative log-likelihood over ``dataset``."""
    _, probs = predict_dataset(config, params, dataset, batch_size)
    picked = probs[np.arange(len(dataset)), np.asarray(dataset.labels)]
    return float(-np.mean(np.log(np.maximum(picked, 1e-12))))


def evaluate(config, params, dataset, batch_size=256, threads=1) -> Metrics:
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    preds, _ = predict_dataset(config, params, dataset, batch_size, threads)
    return confusion_metrics(dataset.labels, preds)


# -- training loop ---------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train: Metrics
    val: Metrics
    seconds: float


@dataclass
class TrainReport:
    seed: int
    config: dict
    hyper: dict
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    wall_time: float = 0.0

    @property
    def losses(self):
        return [e.loss for e in self.epochs]

    COLUMNS = ("epoch", "loss", "train_acc", "train_p", "train_r", "val_acc", "val_p", "val_r", "seconds")

    def to_table(self, provenance=True) -> str:
        """Tab-separated table, one row per epoch; ``#`` lines carry the run settings."""
        lines = []
        if provenance:
            lines.append(f"# seed={self.seed}")
            lines += [f"# {k}={v}" for k, v in sorted(self.config.items())]
            lines += [f"# {k}={v}" for k, v in sorted(self.hyper.items())]
            lines.append(f"# best_epoch={self.best_epoch}")
        lines.append("\t".join(self.COLUMNS))
        for e in self.epochs:
            vals = (e.loss, e.train.accuracy, e.train.precision, e.train.recall,
                    e.val.accuracy, e.val.precision, e.val.recall, e.seconds)
            lines.append("\t".join([str(e.epoch)] + [f"{v:.6f}" for v in vals]))
        return "\n".join(lines) + "\n"


def make_batches(order, batch_size):
    """Consecutive chunks of ``order``; a trailing single example joins the previous chunk
    because batch normalization needs two rows."""
    chunks = [order[s : s + batch_size] for s in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def train(
    config: ModelConfig,
    train_set,
    val_set,
    epochs: int = 30,
    batch_size: int = 128,
    lr: float = 0.001,
    seed: int = 0,
    clip_norm=5.0,
    threads: int = 1,
    params: ModelParams | None = None,
    fused: bool = True,
    keep_best: bool = True,
):
    """Mini-batch Adam training; returns the parameters of the best validation epoch.

    Ties in validation accuracy keep the earliest epoch. ``keep_best=False``
    returns the last epoch instead (``report.best_epoch`` is still recorded).
    With ``epochs=0`` the initial parameters come back with an empty report.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    if len(np.unique(train_set.labels)) < 2:
        raise ConfigError("training set contains a single class")
    if batch_size < 2:
        raise ConfigError("batch_size must be at least 2 (batch normalization)")
    if len(train_set) < 2:
        raise ConfigError("training set needs at least 2 examples")

    rng = RngState(seed)
    params = params if params is not None else init_params(config, rng)
    shuffle_rng = rng.stream("shuffle")
    dropout_rng = rng.stream("dropout")
    state = AdamState(lr=lr)
    report = TrainReport(
        seed=seed,
        config=config.to_dict(),
        hyper={"epochs": epochs, "batch_size": batch_size, "lr": lr, "clip_norm": clip_norm},
    )
    best, best_acc = params.copy(), -1.0
    start = time.perf_counter()

    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        total_loss = 0.0
        for b, idx in enumerate(make_batches(order, batch_size)):
            batch = train_set.select(idx)
            trainable = params.trainable()
            params.zero_grad()
            try:
                probs, _ = forward(config, params, batch, mode="train", rng=dropout_rng, fused=fused)
                loss = cross_entropy_loss(probs, batch.labels)
                if not np.isfinite(loss.item()):
                    raise NumericFailure("loss is not finite")
                loss.backward()
                grads = {n: t.grad for n, t in trainable.items()}
                for n, g in grads.items():
                    if g is not None and not np.all(np.isfinite(g)):
                        raise NumericFailure(f"gradient of {n} is not finite")
            except NumericFailure as exc:
                raise NumericFailure(f"epoch {epoch}, batch {b}: {exc}") from exc
            grads, _ = clip_global_norm(grads, clip_norm)
            adam_step(state, trainable, grads)
            total_loss += loss.item() * len(idx)

        record = EpochRecord(
            epoch=epoch,
            loss=total_loss / len(train_set),
            train=evaluate(config, params, train_set, threads=threads),
            val=evaluate(config, params, val_set, threads=threads),
            seconds=time.perf_counter() - t0,
        )
        report.epochs.append(record)
        log.info(
            "epoch %d loss %.4f train acc %.4f val acc %.4f (%.1fs)",
            epoch, record.loss, record.train.accuracy, record.val.accuracy, record.seconds,
        )
        if record.val.accuracy > best_acc:
            best, best_acc = params.copy(), record.val.accuracy
            report.best_epoch = epoch

    report.wall_time = time.perf_counter() - start
    return (best if keep_best else params), report
