"""Dense float32 tensors with reverse-mode autodiff on an explicit tape.

Every op computes its forward value with numpy and, when a GradientTape is
active, records a closure for the backward pass. Ops are pure: no op mutates
its inputs. Everything runs single-threaded and is deterministic given
identical inputs.
"""

from __future__ import annotations

import math

import numpy as np

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class ShapeError(ValueError):
    """Raised when operand dimensions do not conform."""


class Tensor:
    """A dense float32 array. NaN/Inf are rejected at construction."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite (got NaN or Inf)")
        self.data = arr
        self.grad = None

    @property
    def dims(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(dims={self.data.shape})"


class GradientTape:
    """Ordered record of primitive ops; recording order is a topological order.

    Use as a context manager; ops executed inside the block are recorded.
    """

    def __init__(self):
        self.records = []  # (output, inputs, backward_fn)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[GradientTape] = []


def _record(out: Tensor, inputs, backward_fn):
    if _TAPE_STACK:
        _TAPE_STACK[-1].records.append((out, inputs, backward_fn))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(tape: GradientTape, loss: Tensor) -> dict:
    """Walk the tape in reverse, accumulating gradients additively.

    Returns a map id(tensor) -> gradient array and also stores gradients on
    the tensors themselves (in .grad). Requires a scalar loss.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got dims {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(tape.records):
        g_out = grads.get(id(out))
        if g_out is None:
            continue
        for inp, g_in in zip(inputs, backward_fn(g_out)):
            if g_in is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
    for out, inputs, _ in tape.records:
        for t in (out, *inputs):
            if isinstance(t, Tensor) and id(t) in grads:
                t.grad = grads[id(t)]
    return grads


def _require_dims_match(a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"dims mismatch: {list(a.data.shape)} vs {list(b.data.shape)}")


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * np.float32(c))

    def bwd(g):
        return (g * np.float32(c),)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2: {list(a.data.shape)} vs {list(b.data.shape)}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"inner dims differ: {list(a.data.shape)} vs {list(b.data.shape)}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), bwd)


def reshape(a: Tensor, dims) -> Tensor:
    out = Tensor(a.data.reshape(dims))

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _record(out, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(out, (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _record(out, (a,), bwd)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature affine terms."""
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ShapeError(f"affine dims {list(gain.data.shape)} do not match feature dim {x.data.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)
    n = x.data.shape[-1]

    def bwd(g):
        reduce_axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=reduce_axes)
        dbias = g.sum(axis=reduce_axes)
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        _ = n
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), bwd)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation gelu."""
    x = a.data
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x ** 3)
    t = np.tanh(u)
    out = Tensor(0.5 * x * (1.0 + t))

    def bwd(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x ** 2)
        dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du
        return (g * dydx.astype(np.float32),)

    return _record(out, (a,), bwd)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.data.shape[0]:
        raise ValueError(f"token id out of range [0, {table.data.shape[0]})")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), bwd)


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean())
    n = a.data.size

    def bwd(g):
        return (np.full_like(a.data, g / n),)

    return _record(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bwd(g):
        return (np.full_like(a.data, g),)

    return _record(out, (a,), bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements, as one primitive."""
    _require_dims_match(a, b)
    diff = a.data - b.data
    out = Tensor(np.mean(diff * diff))
    n = diff.size

    def bwd(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _record(out, (a, b), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token negative log-likelihood. targets: int array matching
    logits dims minus the vocab axis."""
    targets = np.asarray(targets)
    flat = logits.data.reshape(-1, logits.data.shape[-1])
    tgt = targets.reshape(-1)
    if tgt.shape[0] != flat.shape[0]:
        raise ShapeError(f"targets {list(targets.shape)} do not match logits {list(logits.data.shape)}")
    shifted = flat - flat.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1))
    nll = logz - shifted[np.arange(tgt.shape[0]), tgt]
    out = Tensor(nll.mean())
    n = tgt.shape[0]

    def bwd(g):
        p = np.exp(shifted - logz[:, None])
        p[np.arange(n), tgt] -= 1.0
        return ((g / n) * p.reshape(logits.data.shape),)

    return _record(out, (logits,), bwd)
