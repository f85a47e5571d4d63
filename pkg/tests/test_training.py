import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birdevo.errors import DataError, NumericalError
from birdevo.genome import CONDITIONS, SPECTROGRAM, Genome, LayerGene
from birdevo.network import InputSpec, build_network, save_weights
from birdevo.training import (
    EARLY_STOP,
    AdamState,
    ClipSet,
    TrainConfig,
    adam_step,
    evaluate,
    train,
)


def closed_form_adam(grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8, p0=0.0):
    """Parameter trajectory from explicit weighted sums, no running state."""
    out, p = [], p0
    for t in range(1, len(grads) + 1):
        m = sum((1 - b1) * b1 ** (t - i) * grads[i - 1] for i in range(1, t + 1))
        v = sum((1 - b2) * b2 ** (t - i) * grads[i - 1] ** 2 for i in range(1, t + 1))
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        out.append(p)
    return out


def _run_adam(grads, config=TrainConfig()):
    p = np.zeros(1)
    state = AdamState.zeros_like([p])
    traj = []
    for g in grads:
        adam_step([p], [np.array([g])], state, config)
        traj.append(float(p[0]))
    return traj


def test_adam_first_step():
    (p1,) = _run_adam([1.0])
    assert p1 == pytest.approx(-0.0009999999900, rel=1e-10)


def test_adam_two_steps():
    p = _run_adam([1.0, 1.0])
    # the reference value is quoted to ten decimals
    assert p[1] == pytest.approx(-0.0019999999, abs=1e-10)
    assert p[1] == pytest.approx(closed_form_adam([1.0, 1.0])[1], rel=1e-12)


def test_adam_zero_gradient_leaves_param():
    assert _run_adam([0.0]) == [0.0]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False).filter(lambda g: g == 0 or abs(g) > 1e-6), min_size=3, max_size=3))
def test_adam_matches_closed_form(grads):
    got = _run_adam(grads)
    want = closed_form_adam(grads)
    for t, (a, b) in enumerate(zip(got, want)):
        # relative to the trajectory so far: steps of opposite sign may cancel p itself
        scale = max(max(abs(x) for x in want[: t + 1]), 1e-300)
        assert abs(a - b) <= 1e-12 * scale


def test_adam_rejects_non_finite_gradient():
    p = np.zeros(2)
    state = AdamState.zeros_like([p])
    with pytest.raises(NumericalError):
        adam_step([p], [np.array([1.0, np.nan])], state, TrainConfig())
    assert not p.any()


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x += 0.3 * np.sign(x[:, :1] + 0.5 * x[:, 1:2])  # open a margin around the boundary
    return ClipSet(y, conditions=x.astype(np.float32))


def test_separable_toy_reaches_high_accuracy():
    data = _separable()
    net = build_network(Genome(CONDITIONS, [LayerGene.dense(10)]), InputSpec(None, 2), seed=0)
    _, hist = train(net, data, data, TrainConfig(max_epochs=50, learning_rate=0.01, patience=50))
    assert len(hist) <= 50
    assert evaluate(net, data)[1] >= 0.99


def test_patience_one_with_zero_learning_rate_stops_at_epoch_two():
    x = np.random.default_rng(1).normal(size=(30, 3)).astype(np.float32)
    data = ClipSet(np.ones(30, dtype=int), conditions=x)
    net = build_network(Genome(CONDITIONS, [LayerGene.dense(10)]), InputSpec(None, 3), seed=0)
    _, hist = train(net, data, data, TrainConfig(learning_rate=0.0, patience=1))
    assert len(hist) == 2
    assert hist.stop_reason == EARLY_STOP
    assert hist.best_epoch == 1


def test_restores_best_validation_weights():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(60, 4)).astype(np.float32)
    y = rng.integers(0, 2, 60)  # labels carry no signal, so validation loss wanders
    tr, va = ClipSet(y[:40], conditions=x[:40]), ClipSet(y[40:], conditions=x[40:])
    net = build_network(Genome(CONDITIONS, [LayerGene.dense(100), LayerGene.dense(100)]), InputSpec(None, 4), seed=2)
    _, hist = train(net, tr, va, TrainConfig(max_epochs=12, learning_rate=0.01, patience=4))
    assert len(hist) <= 12
    assert evaluate(net, va)[0] == pytest.approx(min(hist.val_loss), rel=1e-6)
    assert hist.val_loss[hist.best_epoch - 1] == min(hist.val_loss)


def test_training_is_deterministic(tmp_path):
    rng = np.random.default_rng(4)
    imgs = rng.random((50, 8, 8, 3), dtype=np.float32)
    labels = rng.integers(0, 2, 50)
    data = ClipSet(labels, images=imgs)
    g = Genome(SPECTROGRAM, [LayerGene.conv(3, 2, 0.2), LayerGene.dense(10, 0.1)])
    runs = []
    for i in range(2):
        net = build_network(g, InputSpec((8, 8, 3), 0), seed=7)
        _, hist = train(net, data.subset(range(30)), data.subset(range(30, 50)), TrainConfig(max_epochs=4, seed=7))
        path = tmp_path / f"w{i}.enw"
        save_weights(net, path)
        hist.to_csv(tmp_path / f"h{i}.csv")
        runs.append((path.read_bytes(), (tmp_path / f"h{i}.csv").read_bytes()))
    assert runs[0] == runs[1]


def test_history_csv_header(tmp_path):
    data = _separable(40)
    net = build_network(Genome(CONDITIONS, [LayerGene.dense(10)]), InputSpec(None, 2))
    _, hist = train(net, data, data, TrainConfig(max_epochs=3, patience=3))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_acc"
    assert len(lines) == 4


def test_last_partial_batch_is_used(monkeypatch):
    # 21 samples with batch 20: a second step of size one must happen each epoch
    import birdevo.training as tr

    data = _separable(21)
    net = build_network(Genome(CONDITIONS, [LayerGene.dense(10)]), InputSpec(None, 2), seed=0)
    steps = []
    real = tr.adam_step

    def counting(params, grads, state, config):
        steps.append(len(grads))
        real(params, grads, state, config)

    monkeypatch.setattr(tr, "adam_step", counting)
    train(net, data, data, TrainConfig(max_epochs=1))
    assert len(steps) == 2


def test_empty_sets_rejected():
    net = build_network(Genome(CONDITIONS, [LayerGene.dense(10)]), InputSpec(None, 2))
    empty = ClipSet(np.zeros(0, dtype=int), conditions=np.zeros((0, 2), np.float32))
    with pytest.raises(DataError):
        train(net, empty, _separable(10), TrainConfig())


def test_misaligned_clipset_rejected():
    with pytest.raises(DataError):
        ClipSet(np.zeros(3, dtype=int), conditions=np.zeros((2, 2)))
