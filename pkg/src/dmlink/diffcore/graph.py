"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`DiffValue` wraps an ndarray together with the closure that
propagates gradients to its inputs.  Calling ``backward()`` on a scalar
result walks the recorded graph once in reverse topological order.  The
op set is deliberately small: enough for FIR chains, small MLPs and the
attention surrogate, nothing more.

Every op prunes itself from the tape when none of its inputs require
gradients, so running a frozen model costs little more than the plain
numpy forward pass.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve


class DiffValue:
    """An ndarray node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_grad_borrowed")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self._grad_borrowed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"DiffValue(shape={self.data.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Accumulate gradients of this scalar into every graph leaf."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar result")
        if not self.requires_grad:
            raise ValueError("result does not depend on any parameter")
        # iterative DFS post-order; nodes are marked when first expanded,
        # not when pushed, so shared parents land after all their consumers
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic dunders --------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def as_value(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


def _accum(node: DiffValue, grad: np.ndarray):
    # single-consumer nodes only ever see one contribution, so the first
    # one is kept by reference; a second contribution forces a copy since
    # the borrowed array may be shared with another node's gradient
    if node.grad is None:
        node.grad = grad
        node._grad_borrowed = True
    elif node._grad_borrowed:
        node.grad = node.grad + grad
        node._grad_borrowed = False
    else:
        node.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward) -> DiffValue:
    needs = any(p.requires_grad for p in parents)
    return DiffValue(data, needs, tuple(parents), backward if needs else None)


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), back)


def div(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / b.data ** 2, b.data.shape))

    return _make(a.data / b.data, (a, b), back)


def power(a, exponent: float) -> DiffValue:
    a = as_value(a)
    exponent = float(exponent)

    def back(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(a.data ** exponent, (a,), back)


def exp(a) -> DiffValue:
    a = as_value(a)
    out = np.exp(a.data)

    def back(g):
        _accum(a, g * out)

    return _make(out, (a,), back)


def log(a) -> DiffValue:
    a = as_value(a)

    def back(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), back)


def sqrt(a) -> DiffValue:
    a = as_value(a)
    out = np.sqrt(a.data)

    def back(g):
        _accum(a, g * 0.5 / out)

    return _make(out, (a,), back)


def sigmoid(a) -> DiffValue:
    a = as_value(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), back)


def relu(a) -> DiffValue:
    a = as_value(a)
    mask = a.data > 0.0

    def back(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), back)


def leaky_relu(a, slope: float = 0.01) -> DiffValue:
    a = as_value(a)
    scale = np.where(a.data > 0.0, 1.0, slope)

    def back(g):
        _accum(a, g * scale)

    return _make(a.data * scale, (a,), back)


def clip_straight_through(a, lo: float, hi: float) -> DiffValue:
    """Clip values but let gradients pass as if the clip were identity.

    The true derivative is zero wherever the clip saturates, which stalls
    any parameter stuck behind a saturated sample.  Passing the gradient
    straight through keeps those parameters trainable at the cost of a
    deliberate mismatch with finite differences on saturated inputs.
    """
    a = as_value(a)

    def back(g):
        _accum(a, g)

    return _make(np.clip(a.data, lo, hi), (a,), back)


# -- linear algebra and shape ops ------------------------------------------

def matmul(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two axes")

    def back(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(a.data @ b.data, (a, b), back)


def reduce_sum(a, axis=None, keepdims=False) -> DiffValue:
    a = as_value(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(out, (a,), back)


def reduce_mean(a, axis=None, keepdims=False) -> DiffValue:
    a = as_value(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / out.size

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _make(out, (a,), back)


def reshape(a, shape) -> DiffValue:
    a = as_value(a)

    def back(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a, axes: Sequence[int]) -> DiffValue:
    a = as_value(a)
    inverse = np.argsort(axes)

    def back(g):
        _accum(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), back)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis
               for i in items)


def getitem(a, idx) -> DiffValue:
    a = as_value(a)
    basic = _is_basic_index(idx)

    def back(g):
        buf = np.zeros_like(a.data)
        if basic:
            buf[idx] += g
        else:
            np.add.at(buf, idx, g)
        _accum(a, buf)

    return _make(a.data[idx], (a,), back)


def concat(values, axis: int = 0) -> DiffValue:
    values = [as_value(v) for v in values]
    sizes = [v.data.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for v, piece in zip(values, np.split(g, splits, axis=axis)):
            if v.requires_grad:
                _accum(v, piece)

    return _make(np.concatenate([v.data for v in values], axis=axis),
                 tuple(values), back)


def stack(values, axis: int = 0) -> DiffValue:
    values = [as_value(v) for v in values]

    def back(g):
        for k, v in enumerate(values):
            if v.requires_grad:
                _accum(v, np.take(g, k, axis=axis))

    return _make(np.stack([v.data for v in values], axis=axis),
                 tuple(values), back)


def pad_last(a, left: int, right: int) -> DiffValue:
    a = as_value(a)
    width = [(0, 0)] * (a.ndim - 1) + [(left, right)]

    def back(g):
        end = g.shape[-1] - right
        _accum(a, g[..., left:end])

    return _make(np.pad(a.data, width), (a,), back)


# -- softmax family ---------------------------------------------------------

def softmax(a, axis: int = -1) -> DiffValue:
    a = as_value(a)
    # worked in place: attention tables get large enough that every
    # avoidable temporary costs real time
    probs = a.data - a.data.max(axis=axis, keepdims=True)
    np.exp(probs, out=probs)
    probs /= probs.sum(axis=axis, keepdims=True)

    def back(g):
        out = g * probs
        inner = out.sum(axis=axis, keepdims=True)
        np.subtract(g, inner, out=out)
        out *= probs
        _accum(a, out)

    return _make(probs, (a,), back)


def softmax_cross_entropy(logits, targets) -> DiffValue:
    """Mean cross entropy in nats over rows of ``logits``.

    ``targets`` holds integer class indices.  The combined op keeps the
    backward pass exact: d loss / d logits = (softmax - onehot) / N.
    """
    logits = as_value(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError("expected (N, K) logits and (N,) integer targets")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(n), targets].mean()

    def back(g):
        grad = np.exp(log_probs)
        grad[np.arange(n), targets] -= 1.0
        _accum(logits, g * grad / n)

    return _make(loss, (logits,), back)


# -- convolution ops --------------------------------------------------------

def fir_diff(x, taps, mode: str = "causal") -> DiffValue:
    """Differentiable FIR along the last axis.

    ``mode='causal'`` uses zero history (y[n] sums taps[k] x[n-k]);
    ``mode='same'`` centers an odd-length filter like
    :func:`dmlink.dsp.fir_same`.  Both signal and taps may carry
    gradients.
    """
    x, taps = as_value(x), as_value(taps)
    if taps.ndim != 1:
        raise ValueError("taps must be one dimensional")
    n_taps = taps.shape[0]
    length = x.shape[-1]
    if mode == "causal":
        offset = 0
    elif mode == "same":
        if n_taps % 2 == 0:
            raise ValueError("centered filtering needs an odd tap count")
        offset = (n_taps - 1) // 2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    kernel = taps.data.reshape((1,) * (x.ndim - 1) + (n_taps,))
    out = fftconvolve(x.data, kernel, mode="full",
                      axes=-1)[..., offset:offset + length]

    def back(g):
        if x.requires_grad:
            flipped = kernel[..., ::-1]
            gx = fftconvolve(g, flipped, mode="full", axes=-1)
            start = n_taps - 1 - offset
            _accum(x, gx[..., start:start + length])
        if taps.requires_grad:
            gt = fftconvolve(g, x.data[..., ::-1], mode="full", axes=-1)
            start = length - 1 - offset
            gt = gt[..., start:start + n_taps]
            if gt.ndim > 1:
                gt = gt.sum(axis=tuple(range(gt.ndim - 1)))
            _accum(taps, gt)

    return _make(out, (x, taps), back)


def depthwise_conv1d(x, weights) -> DiffValue:
    """Per-channel centered convolution: (B, C, T) with (C, K), K odd."""
    x, weights = as_value(x), as_value(weights)
    if x.ndim != 3 or weights.ndim != 2:
        raise ValueError("expected (B, C, T) input and (C, K) weights")
    if x.shape[1] != weights.shape[0]:
        raise ValueError("channel counts do not match")
    n_taps = weights.shape[1]
    if n_taps % 2 == 0:
        raise ValueError("kernel length must be odd")
    half = (n_taps - 1) // 2
    length = x.shape[-1]
    out = fftconvolve(x.data, weights.data[None, :, :], mode="same", axes=-1)

    def back(g):
        if x.requires_grad:
            flipped = weights.data[None, :, ::-1]
            _accum(x, fftconvolve(g, flipped, mode="same", axes=-1))
        if weights.requires_grad:
            gw = fftconvolve(g, x.data[..., ::-1], mode="full", axes=-1)
            start = length - 1 - half
            _accum(weights, gw[..., start:start + n_taps].sum(axis=0))

    return _make(out, (x, weights), back)
