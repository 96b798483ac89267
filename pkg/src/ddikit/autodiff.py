"""Minimal reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray; differentiable operations record themselves on
the active ``Tape`` (a Wengert list). ``backward`` replays the tape in reverse,
visiting each recorded operation exactly once and accumulating gradients
additively, so a parameter used several times receives the sum of all its
contributions.

Only the operations needed by the DDI model are implemented. Training runs in
float32; float64 is available for gradient checking.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense n-dimensional real array with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, what: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable tensor. Names are unique dotted paths within a model."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name


class _TapeEntry:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.entries: list[_TapeEntry] = []

    def __len__(self):
        return len(self.entries)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


class _NoGrad:
    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


_TAPE_STACK: list[Optional[Tape]] = []


def no_grad() -> _NoGrad:
    return _NoGrad()


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(out_data, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        tape.entries.append(_TapeEntry(out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor, tape: Tape):
    """Populate ``.grad`` on every tensor that influenced a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    loss.grad = np.ones_like(loss.data)
    for entry in reversed(tape.entries):
        g = entry.output.grad
        if g is None:
            continue
        grads = entry.backward_fn(g)
        for inp, gi in zip(entry.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.data.dtype)
            if inp.grad is None:
                inp.grad = gi.copy()
            else:
                inp.grad = inp.grad + gi


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = a.data * s

    def bwd(g):
        return (g * s,)

    return _make(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ka = a.data.shape[-1]
    kb = b.data.shape[-2] if b.data.ndim > 1 else b.data.shape[0]
    if ka != kb:
        raise ShapeError(f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    ndim = a.data.ndim
    if axis is None:
        axes = tuple(range(ndim))
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % ndim for ax in axes)

    def bwd(g):
        g = np.asarray(g)
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape),)

    return _make(np.asarray(out), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else (
        np.prod([a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return _make(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    out = np.where(keep, a.data, 0)

    def bwd(g):
        return (g * keep,)

    return _make(out, (a,), bwd)


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, slope * a.data)

    def bwd(g):
        return (np.where(pos, g, slope * g),)

    return _make(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if a.data.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), bwd)


def cross_entropy_loss(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer class targets under softmax(logits)."""
    targets = np.asarray(targets, dtype=np.int64)
    n, m = logits.data.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} does not match batch {n}")
    if targets.min() < 0 or targets.max() >= m:
        raise IndexError(f"target class out of range [0, {m})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    loss = -log_probs[np.arange(n), targets].mean()

    def bwd(g):
        probs = np.exp(log_probs)
        probs[np.arange(n), targets] -= 1.0
        return (g * probs / n,)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer index; scatter-add on backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"index out of range for table of {table.data.shape[0]} rows")
    out = table.data[ids]

    def bwd(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (dt,)

    return _make(out, (table,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis per position, then apply learnable gain/bias."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gain.data * xhat + bias.data

    def bwd(g):
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _make(out, (x, gain, bias), bwd)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch normalization over all axes except the channel axis.

    Channel axis is 1 for 3-d input [batch, channels, length] and the last
    axis for 2-d input [batch, features]. In training mode the running
    statistics are updated in place; in eval mode the op is a fixed affine map.
    """
    if x.data.ndim == 2:
        red_axes = (0,)
        cshape = (1, -1)
    elif x.data.ndim == 3:
        red_axes = (0, 2)
        cshape = (1, -1, 1)
    else:
        raise ShapeError(f"batch_norm expects 2-d or 3-d input, got {x.data.shape}")
    gam = gamma.data.reshape(cshape)
    bet = beta.data.reshape(cshape)
    if training:
        mu = x.data.mean(axis=red_axes, keepdims=True)
        var = x.data.var(axis=red_axes, keepdims=True)
        n = x.data.size // x.data.shape[1 if x.data.ndim == 3 else -1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        # unbiased variance for the running estimate
        running_var += momentum * var.reshape(-1) * (n / max(n - 1, 1))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        out = gam * xhat + bet

        def bwd(g):
            dgamma = (g * xhat).sum(axis=red_axes).astype(gamma.data.dtype)
            dbeta = g.sum(axis=red_axes).astype(beta.data.dtype)
            gx = g * gam
            dx = inv * (gx - gx.mean(axis=red_axes, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=red_axes, keepdims=True))
            return dx, dgamma, dbeta

        return _make(out, (x, gamma, beta), bwd)

    inv = 1.0 / np.sqrt(running_var.reshape(cshape) + eps)
    xhat = (x.data - running_mean.reshape(cshape)) * inv
    out = gam * xhat + bet

    def bwd_eval(g):
        dgamma = (g * xhat).sum(axis=red_axes).astype(gamma.data.dtype)
        dbeta = g.sum(axis=red_axes).astype(beta.data.dtype)
        return g * gam * inv, dgamma, dbeta

    return _make(out, (x, gamma, beta), bwd_eval)


def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + kernel - length, 0)
    left = total // 2
    return left, total - left


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """1-d convolution with zero "same" padding.

    x: [batch, in_channels, length], w: [out_channels, in_channels, kernel],
    b: [out_channels]. Output length is ceil(length / stride).
    """
    bsz, cin, length = x.data.shape
    cout, cin_w, kernel = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d channel mismatch: input {cin} vs kernel {cin_w}")
    pl, pr = _same_padding(length, kernel, stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]
    out = np.einsum("bilk,oik->bol", cols, w.data, optimize=True) + b.data[None, :, None]
    out = np.ascontiguousarray(out)
    out_len = cols.shape[2]
    starts = np.arange(out_len) * stride
    positions = starts[:, None] + np.arange(kernel)[None, :]

    def bwd(g):
        dw = np.einsum("bilk,bol->oik", cols, g, optimize=True).astype(w.data.dtype)
        db = g.sum(axis=(0, 2)).astype(b.data.dtype)
        dcols = np.einsum("oik,bol->bilk", w.data, g, optimize=True)
        dxp = np.zeros_like(xp)
        np.add.at(dxp, (slice(None), slice(None), positions), dcols)
        return dxp[:, :, pl:pl + length], dw, db

    return _make(out, (x, w, b), bwd)


def max_pool1d(x: Tensor, kernel: int = 2, stride: int = 2) -> Tensor:
    """Max pooling over the last axis with ceil-mode right padding."""
    if kernel != stride:
        raise ShapeError("max_pool1d only supports kernel == stride")
    bsz, c, length = x.data.shape
    out_len = -(-length // stride)
    pad = out_len * stride - length
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, pad)), constant_values=-np.inf)
    windows = xp.reshape(bsz, c, out_len, stride)
    arg = windows.argmax(axis=3)
    out = np.take_along_axis(windows, arg[..., None], axis=3)[..., 0]

    def bwd(g):
        dxp = np.zeros_like(xp)
        np.put_along_axis(dxp.reshape(bsz, c, out_len, stride), arg[..., None],
                          g[..., None], axis=3)
        return (dxp[:, :, :length],)

    return _make(out, (x,), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    out = x.data * keep

    def bwd(g):
        return (g * keep,)

    return _make(out, (x,), bwd)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)
