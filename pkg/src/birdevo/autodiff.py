"""Small reverse-mode autodiff engine over numpy arrays.

Operations record themselves onto the innermost active :class:`Tape` when at
least one operand requires a gradient.  Outside a tape everything runs as
plain numpy, which is how inference and finite differencing are done.

Image tensors are channels-last: ``(H, W, C)`` for a single sample or
``(N, H, W, C)`` for a batch.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "add",
    "mul",
    "total",
    "reshape",
    "flatten",
    "concat",
    "dense",
    "conv2d",
    "relu",
    "dropout",
    "softmax",
    "softmax_cross_entropy",
    "grad_check",
]


class Tensor:
    """Dense array plus optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; tapes nest per thread and only the innermost
    one records.
    """

    _local = threading.local()

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        self._local.stack.pop()

    @classmethod
    def current(cls) -> "Tape | None":
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

        Records are replayed once each, newest first.
        """
        if seed is None:
            if loss.size != 1:
                raise ShapeError(f"backward needs a scalar loss or an explicit seed, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        pending: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=loss.data.dtype)}
        produced = {id(r.output) for r in self.records}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            grads = rec.backward(g)
            for t, gi in zip(rec.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in produced:
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
                else:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
        if id(loss) in pending and id(loss) not in produced and loss.requires_grad:
            g = pending.pop(id(loss))
            loss.grad = g if loss.grad is None else loss.grad + g


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward) -> Tensor:
    tape = Tape.current()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.records.append(_Record(tuple(inputs), out, backward))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record((a, b), out, backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record((a, b), out, backward)


def total(a) -> Tensor:
    """Sum of all elements (scalar)."""
    a = _as_tensor(a)

    def backward(g):
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _record((a,), np.asarray(a.data.sum()), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from exc

    def backward(g):
        return (g.reshape(a.shape),)

    return _record((a,), out, backward)


def flatten(a, batched: bool = True) -> Tensor:
    a = _as_tensor(a)
    if batched:
        return reshape(a, (a.shape[0], -1))
    return reshape(a, (-1,))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(ts, out, backward)


def dense(x, weights, bias) -> Tensor:
    """``x @ weights + bias`` for ``x`` of shape ``(N,)`` or ``(B, N)``."""
    x, w, b = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    if w.data.ndim != 2 or b.data.shape != (w.shape[1],):
        raise ShapeError(f"dense: weights {w.shape} and bias {b.shape} do not form an N x M layer")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input width {x.shape[-1]} does not match weight rows {w.shape[0]}")
    out = x.data @ w.data + b.data

    def backward(g):
        if x.data.ndim == 1:
            gw = np.outer(x.data, g)
            gb = g
        else:
            gw = x.data.T @ g
            gb = g.sum(axis=0)
        return g @ w.data.T, gw, gb

    return _record((x, w, b), out, backward)


def _conv_same(xpad: np.ndarray, w: np.ndarray, h: int, wd: int) -> np.ndarray:
    """Correlate padded ``(N, H+2p, W+2p, Cin)`` input with ``(k, k, Cin, F)``."""
    n, cin = xpad.shape[0], xpad.shape[3]
    k, nf = w.shape[0], w.shape[3]
    if cin >= 8:
        out = np.zeros((n, h, wd, nf), dtype=np.result_type(xpad, w))
        for i in range(k):
            for j in range(k):
                out += xpad[:, i : i + h, j : j + wd, :] @ w[i, j]
        return out
    # few input channels: gather one kernel row at a time so the matmul is wider
    out = np.zeros((n * h * wd, nf), dtype=np.result_type(xpad, w))
    buf = np.empty((n, h, wd, k, cin), dtype=xpad.dtype)
    for i in range(k):
        for j in range(k):
            buf[:, :, :, j, :] = xpad[:, i : i + h, j : j + wd, :]
        out += buf.reshape(-1, k * cin) @ w[i].reshape(k * cin, nf)
    return out.reshape(n, h, wd, nf)


def conv2d(x, filters, bias) -> Tensor:
    """Stride-1 convolution with zero 'same' padding.

    ``filters`` has shape ``(k, k, Cin, F)``; ``x`` is ``(H, W, Cin)`` or
    ``(N, H, W, Cin)``.
    """
    x, w, b = _as_tensor(x), _as_tensor(filters), _as_tensor(bias)
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be (H, W, C) or (N, H, W, C), got {x.shape}")
    if w.data.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError(f"conv2d: filters must be (k, k, Cin, F) with odd k, got {w.shape}")
    k, _, cin, nf = w.shape
    if xd.shape[3] != cin:
        raise ShapeError(f"conv2d: input has {xd.shape[3]} channels but filters expect {cin}")
    if b.shape != (nf,):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {nf} filters")
    n, h, wd, _ = xd.shape
    p = k // 2
    xpad = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0)))
    out = _conv_same(xpad, w.data, h, wd) + b.data
    if single:
        out = out[0]

    def backward(g):
        g4 = g[None] if single else g
        g2 = g4.reshape(-1, nf)
        gw = np.empty_like(w.data)
        for i in range(k):
            for j in range(k):
                gw[i, j] = xpad[:, i : i + h, j : j + wd, :].reshape(-1, cin).T @ g2
        gx = None
        if x.requires_grad:
            # full correlation with the flipped, transposed kernel
            wflip = np.ascontiguousarray(w.data[::-1, ::-1].transpose(0, 1, 3, 2))
            gpad = np.pad(g4, ((0, 0), (p, p), (p, p), (0, 0)))
            gx = _conv_same(gpad, wflip, h, wd)
            if single:
                gx = gx[0]
        return gx, gw, g2.sum(axis=0)

    return _record((x, w, b), out, backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return _record((x,), out, backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = _as_tensor(x)
    if not training or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _record((x,), x.data * keep, backward)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, one_hot) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[true class]``."""
    logits = _as_tensor(logits)
    y = np.asarray(one_hot.data if isinstance(one_hot, Tensor) else one_hot, dtype=logits.data.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"softmax_cross_entropy: labels {y.shape} vs logits {logits.shape}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericalError("softmax_cross_entropy: non-finite logits")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    batch = 1 if logits.data.ndim == 1 else logits.shape[0]
    loss = -(y * logp).sum() / batch

    def backward(g):
        return (g * (np.exp(logp) - y) / batch,)

    return _record((logits,), np.asarray(loss, dtype=logits.data.dtype), backward)


def grad_check(
    computation: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-6,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between tape gradients and central differences.

    The error for one element is ``|a - n| / (max(|a|, |n|) + floor)``;
    ``floor`` keeps exactly-zero gradients from amplifying rounding noise.
    Non-finite comparisons yield ``inf``.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        out = computation(*inputs)
    tape.backward(out)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            fp = float(computation(*inputs).data)
            flat[idx] = orig - epsilon
            fm = float(computation(*inputs).data)
            flat[idx] = orig
            numeric = (fp - fm) / (2 * epsilon)
            a = float(analytic.reshape(-1)[idx])
            if not (np.isfinite(numeric) and np.isfinite(a)):
                return float("inf")
            err = abs(a - numeric) / (max(abs(a), abs(numeric)) + floor)
            worst = max(worst, err)
    return worst
