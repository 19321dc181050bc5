import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stegalyze import tensor as tn
from stegalyze.data import EncodedBatch
from stegalyze.errors import ConfigError, ContractError, NumericFailure
from stegalyze.gradcheck import leaf
from stegalyze.model import ModelConfig, init_params
from stegalyze.rng import RngState
from stegalyze.tensor import Tensor
from stegalyze.training import (
    AdamState,
    adam_step,
    clip_global_norm,
    confusion_metrics,
    cross_entropy_loss,
    dataset_loss,
    evaluate,
    make_batches,
    train,
)


def tiny(**kw):
    base = dict(vocab_size=12, embed_dim=4, hidden=3, kernel_widths=(2, 3), feature_maps=2, fc_dim=4, max_seq_len=7)
    base.update(kw)
    return ModelConfig(**base)


def separable(n=32, seed=0, T=7):
    """Cover rows use words 2..6, stego rows words 7..11."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    ids = np.where(labels[:, None] == 0, rng.integers(2, 7, size=(n, T)), rng.integers(7, 12, size=(n, T)))
    lengths = rng.integers(4, T + 1, size=n)
    ids[np.arange(T)[None, :] >= lengths[:, None]] = 0
    return EncodedBatch(ids, lengths, labels)


# -- loss ------------------------------------------------------------------


def test_cross_entropy_value_and_closed_form_gradient():
    z = leaf([[1.0, -0.5], [0.2, 0.3], [-2.0, 1.0]])
    y = np.array([0, 1, 1])
    p = tn.softmax(z, axis=1)
    loss = cross_entropy_loss(p, y)
    expected = -np.mean([math.log(p.data[i, y[i]]) for i in range(3)])
    assert loss.item() == pytest.approx(expected, rel=1e-14)
    loss.backward()
    np.testing.assert_allclose(z.grad, (p.data - np.eye(2)[y]) / 3, rtol=1e-12)


def test_cross_entropy_floor_keeps_loss_finite():
    loss = cross_entropy_loss(Tensor(np.array([[1.0, 0.0]])), np.array([1]))
    assert loss.item() == pytest.approx(-math.log(1e-12))


def test_cross_entropy_rejects_bad_labels():
    p = Tensor(np.full((2, 2), 0.5))
    with pytest.raises(ContractError):
        cross_entropy_loss(p, np.array([0, 2]))
    with pytest.raises(ContractError):
        cross_entropy_loss(p, np.array([0]))


# -- Adam and clipping -----------------------------------------------------


def test_adam_matches_reference_recursion():
    w = Tensor(np.array([0.5, -1.0, 2.0]))
    grads = [np.array([0.1, -0.3, 0.0]), np.array([0.2, 0.1, -0.5]), np.array([-0.4, 0.0, 0.3])]
    state = AdamState(lr=0.01)
    ref, m, v = w.data.copy(), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, 1):
        adam_step(state, {"w": w}, {"w": g})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(w.data, ref, rtol=1e-14)
    assert state.t == 3


def test_adam_first_step_is_lr_times_sign():
    w = Tensor(np.zeros(3))
    adam_step(AdamState(lr=0.1), {"w": w}, {"w": np.array([3.0, -0.01, 0.0])})
    np.testing.assert_allclose(w.data, [-0.1, 0.1, 0.0], rtol=1e-6)


def test_adam_requires_every_gradient():
    with pytest.raises(ContractError, match="b"):
        adam_step(AdamState(), {"a": Tensor([1.0]), "b": Tensor([1.0])}, {"a": np.ones(1)})


def test_adam_minimizes_a_quadratic():
    w = leaf([3.0, -2.0])
    state = AdamState(lr=0.05)
    for _ in range(500):
        w.grad = None
        tn.sum(tn.mul(w, w)).backward()
        adam_step(state, {"w": w}, {"w": w.grad})
    assert np.all(np.abs(w.data) < 1e-2)


def test_clip_global_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    clipped, norm = clip_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    total = math.sqrt(sum(np.sum(v**2) for v in clipped.values()))
    assert total == pytest.approx(1.0)
    np.testing.assert_allclose(clipped["a"], [0.6, 0.0])
    same, _ = clip_global_norm(g, 10.0)
    assert same is g
    assert clip_global_norm(g, None)[0] is g


# -- metrics ---------------------------------------------------------------


def test_metrics_hand_example():
    labels = [1, 1, 1, 0, 0, 0, 0, 1]
    preds = [1, 0, 1, 0, 1, 0, 0, 1]
    m = confusion_metrics(labels, preds)
    assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 1, 3)
    assert (m.accuracy, m.precision, m.recall) == (0.75, 0.75, 0.75)


def test_metrics_zero_denominators_are_flagged():
    m = confusion_metrics([0, 0, 1], [0, 0, 0])
    assert m.precision == 0.0 and m.precision_undefined
    assert m.recall == 0.0 and not m.recall_undefined
    m = confusion_metrics([0, 0], [0, 1])
    assert m.recall_undefined
    with pytest.raises(ContractError):
        confusion_metrics([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=200))
def test_metrics_agree_with_counts(pairs):
    labels, preds = map(np.array, zip(*pairs))
    m = confusion_metrics(labels, preds)
    assert m.total == len(pairs)
    assert m.accuracy == (m.tp + m.tn) / m.total
    assert m.precision == (m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0)
    assert m.recall == (m.tp / (m.tp + m.fn) if m.tp + m.fn else 0.0)


# -- batching and the loop -------------------------------------------------


@pytest.mark.parametrize("n,bs", [(10, 3), (10, 5), (9, 4), (1, 4), (257, 128)])
def test_batches_cover_everything_once_and_never_hold_one_row(n, bs):
    chunks = make_batches(np.arange(n), bs)
    np.testing.assert_array_equal(np.concatenate(chunks), np.arange(n))
    if n > 1:
        assert min(len(c) for c in chunks) >= 2


def test_zero_epochs_returns_initial_parameters():
    c = tiny()
    data = separable()
    params, report = train(c, data, data, epochs=0, seed=4)
    init = init_params(c, RngState(4))
    for name, t in params.named_tensors().items():
        np.testing.assert_array_equal(t.data, init.named_tensors()[name].data)
    assert report.epochs == [] and report.best_epoch == 0


def test_training_is_deterministic():
    c = tiny()
    data = separable()
    a, ra = train(c, data, data, epochs=2, batch_size=8, seed=1)
    b, rb = train(c, data, data, epochs=2, batch_size=8, seed=1)
    for (n, x), (_, y) in zip(a.named_tensors().items(), b.named_tensors().items()):
        assert x.data.tobytes() == y.data.tobytes(), n
    assert ra.losses == rb.losses


def test_training_learns_a_separable_problem():
    c = tiny()
    data = separable(64)
    params, report = train(c, data, data, epochs=25, batch_size=16, lr=0.01, seed=0)
    assert report.losses[-1] < report.losses[0]
    assert evaluate(c, params, data).accuracy >= 0.95


def test_best_epoch_keeps_earliest_of_ties():
    c = tiny()
    data = separable(16)
    params, report = train(c, data, data, epochs=6, batch_size=8, lr=0.05, seed=2)
    accs = [e.val.accuracy for e in report.epochs]
    assert report.best_epoch == int(np.argmax(accs)) + 1
    assert evaluate(c, params, data).accuracy == accs[report.best_epoch - 1]


def test_keep_best_false_returns_the_last_epoch():
    c = tiny()
    data = separable(16)
    last, report = train(c, data, data, epochs=4, batch_size=8, lr=0.05, seed=2, keep_best=False)
    longer, _ = train(c, data, data, epochs=5, batch_size=8, lr=0.05, seed=2, keep_best=False)
    assert report.best_epoch >= 1
    assert evaluate(c, last, data).accuracy == report.epochs[-1].val.accuracy
    assert not np.array_equal(last.fc.W.data, longer.fc.W.data)


def test_dataset_loss_matches_the_training_loss_in_inference_mode():
    c = tiny()
    params = init_params(c, RngState(0))
    data = separable(12)
    from stegalyze.model import forward

    probs, _ = forward(c, params, data, mode="infer")
    expected = cross_entropy_loss(probs, data.labels).item()
    assert dataset_loss(c, params, data, batch_size=5) == pytest.approx(expected, rel=1e-6)


def test_report_table_format():
    c = tiny()
    data = separable(16)
    _, report = train(c, data, data, epochs=2, batch_size=8, seed=0)
    lines = report.to_table().splitlines()
    header = [l for l in lines if not l.startswith("#")]
    assert header[0].split("\t") == list(report.COLUMNS)
    assert len(header) == 3 and header[1].startswith("1\t")
    assert "# seed=0" in lines and any(l.startswith("# hidden=3") for l in lines)


def test_training_input_validation():
    c = tiny()
    data = separable(8)
    with pytest.raises(ConfigError):
        train(c, data, data, batch_size=1)
    one_class = EncodedBatch(data.ids, data.lengths, np.zeros(8, dtype=np.int64))
    with pytest.raises(ConfigError):
        train(c, one_class, data)
    with pytest.raises(ConfigError):
        train(c, data.select(np.arange(0)), data)


def test_numeric_failure_reports_epoch_and_batch():
    c = tiny()
    params = init_params(c, RngState(0))
    params.fc.W.data[:] = np.nan
    with pytest.raises(NumericFailure, match="epoch 1, batch 0"):
        train(c, separable(8), separable(8), epochs=1, params=params)
