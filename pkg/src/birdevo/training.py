"""Mini-batch Adam training with validation-loss early stopping."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import autodiff as ad
from .autodiff import Tape
from .errors import DataError, NumericalError
from .network import N_CLASSES, Network

# substream tags mixed into the seed so batch order and dropout masks never share draws
_SHUFFLE_STREAM = 1
_DROPOUT_STREAM = 2

EPOCH_BUDGET = "epoch budget"
EARLY_STOP = "early stop"


@dataclass
class ClipSet:
    """Aligned arrays for a set of clips; label 1 means the song is present."""

    labels: np.ndarray
    images: np.ndarray | None = None
    conditions: np.ndarray | None = None
    strata: np.ndarray | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for name in ("images", "conditions", "strata", "ids"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != len(self.labels):
                raise DataError(f"{name} has {len(arr)} rows but there are {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ClipSet":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return ClipSet(self.labels[idx], pick(self.images), pick(self.conditions), pick(self.strata), pick(self.ids))

    def one_hot(self, dtype=np.float32) -> np.ndarray:
        return np.eye(N_CLASSES, dtype=dtype)[self.labels]


@dataclass
class TrainConfig:
    batch_size: int = 20
    max_epochs: int = 50
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must all be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie strictly between 0 and 1")
        if self.learning_rate < 0 or self.epsilon <= 0:
            raise ValueError("learning_rate must be >= 0 and epsilon > 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient, aborting this training run")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        # in-place form of p -= lr * (m / c1) / (sqrt(v / c2) + eps), same rounding order
        a = np.multiply(g, 1.0 - b1)
        m *= b1
        m += a
        b = np.multiply(g, g)
        b *= 1.0 - b2
        v *= b2
        v += b
        np.divide(m, c1, out=a)
        a *= config.learning_rate
        np.divide(v, c2, out=b)
        np.sqrt(b, out=b)
        b += config.epsilon
        a /= b
        p -= a


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    stop_reason: str = EPOCH_BUDGET
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), start=1):
            yield (i, *row)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for epoch, tl, vl, va in self.rows():
                w.writerow([epoch, repr(tl), repr(vl), repr(va)])


def _inputs(network: Network, data: ClipSet, idx=None):
    def take(a):
        if a is None:
            return None
        return a if idx is None else a[idx]

    images = take(data.images) if "spectrogram" in network.inputs else None
    conditions = take(data.conditions) if "conditions" in network.inputs else None
    return images, conditions


def evaluate(network: Network, data: ClipSet) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over ``data`` in inference mode."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty set")
    probs = network.predict_proba(*_inputs(network, data))
    p_true = probs[np.arange(len(data)), data.labels].astype(np.float64)
    with np.errstate(divide="ignore"):
        loss = float(-np.log(p_true).mean())
    acc = float((probs.argmax(axis=1) == data.labels).mean())
    return loss, acc


def accuracy(network: Network, data: ClipSet) -> float:
    return evaluate(network, data)[1]


def train(network: Network, train_set: ClipSet, val_set: ClipSet, config: TrainConfig) -> tuple[Network, TrainHistory]:
    """Train in place and restore the weights of the best validation epoch."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must both be non-empty")
    with threadpool_limits(limits=1):
        return _train(network, train_set, val_set, config)


def _train(network, train_set, val_set, config):
    params = network.trainable_parameters()
    state = AdamState.zeros_like([p.data for p in params])
    targets = train_set.one_hot(dtype=params[0].data.dtype if params else np.float32)
    history = TrainHistory()
    best_loss = np.inf
    best_state = network.state()
    stale = 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        order = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch]).permutation(n)
        drop_rng = np.random.default_rng([config.seed, _DROPOUT_STREAM, epoch])
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            images, conditions = _inputs(network, train_set, idx)
            with Tape() as tape:
                logits = network.forward(images, conditions, training=True, rng=drop_rng)
                loss = ad.softmax_cross_entropy(logits, targets[idx])
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            for p in params:
                p.grad = None
            tape.backward(loss)
            grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
            adam_step([p.data for p in params], grads, state, config)
            running += float(loss.data) * len(idx)
        val_loss, val_acc = evaluate(network, val_set)
        if not np.isfinite(val_loss) and not np.isinf(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(running / n)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = network.state()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                history.stop_reason = EARLY_STOP
                break
    network.set_state(best_state)
    return network, history
