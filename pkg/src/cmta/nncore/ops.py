"""Differentiable operators over :class:`Tensor`.

Shapes follow a channels-last convention: sequence tensors are
``[..., seq, channels]`` with any number of leading batch axes.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeMismatch, Tensor, as_tensor


class NonFiniteInput(ValueError):
    pass


class IndivisibleLength(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor._from_op(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor._from_op(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return Tensor._from_op(out.astype(x.dtype, copy=False), (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._from_op(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return Tensor._from_op(np.asarray(out), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul needs operands of rank >= 2")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with a single fused backward."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear {x.shape} @ {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data.T
        g2 = g.reshape(-1, g.shape[-1])
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._from_op(out, parents, backward)


# ---------------------------------------------------------------------------
# neural network operators
# ---------------------------------------------------------------------------

def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError(f"embedding id out of range [0, {weight.shape[0]})")

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return Tensor._from_op(weight.data[ids], (weight,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, n)
        ggamma = (flat * xhat.reshape(-1, n)).sum(axis=0)
        gbeta = flat.sum(axis=0)
        return gx, ggamma, gbeta

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def _softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    e = np.exp(z - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits: Tensor, axis: int = -1, key_mask: np.ndarray | None = None) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    ``key_mask`` (broadcastable, truthy = keep) sends masked logits to -inf
    before normalizing; masked entries come out exactly 0.
    """
    z = logits.data
    if key_mask is None:
        if not np.all(np.isfinite(z)):
            raise NonFiniteInput("softmax received non-finite logits")
    else:
        z = np.where(key_mask, z, -np.inf)
    s = _softmax_np(z, axis)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s.astype(logits.dtype, copy=False), (logits,), backward)


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """'same' zero-padded cross-correlation along the sequence axis.

    x: ``[..., seq, c_in]``, kernels: ``[k, c_in, c_out]``, bias: ``[c_out]``.
    """
    k, c_in, c_out = kernels.shape
    if k % 2 != 1:
        raise ShapeMismatch(f"conv kernel size must be odd, got {k}")
    if x.shape[-1] != c_in:
        raise ShapeMismatch(f"conv1d input channels {x.shape[-1]} != kernel {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatch(f"conv1d bias shape {bias.shape} != ({c_out},)")
    seq = x.shape[-2]
    half = k // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    # windows: [..., seq, k * c_in] so the whole conv is one matmul
    cols = np.concatenate([xp[..., j:j + seq, :] for j in range(k)], axis=-1)
    wmat = kernels.data.reshape(k * c_in, c_out)
    out = cols @ wmat
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gcols = g @ wmat.T
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[..., j:j + seq, :] += gcols[..., j * c_in:(j + 1) * c_in]
        gx = gxp[..., half:half + seq, :]
        gw = (cols.reshape(-1, k * c_in).T @ g.reshape(-1, c_out)).reshape(k, c_in, c_out)
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, c_out).sum(axis=0)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._from_op(out, parents, backward)


def _pool_view(x: Tensor, pool: int) -> np.ndarray:
    seq, c = x.shape[-2], x.shape[-1]
    if pool < 1 or seq % pool:
        raise IndivisibleLength(f"sequence length {seq} not divisible by pool {pool}")
    return x.data.reshape(*x.shape[:-2], seq // pool, pool, c)


def avg_pool1d(x: Tensor, pool: int) -> Tensor:
    view = _pool_view(x, pool)
    out = view.mean(axis=-2)

    def backward(g):
        gv = np.broadcast_to(np.expand_dims(g / pool, -2), view.shape)
        return (gv.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


def max_pool1d(x: Tensor, pool: int) -> Tensor:
    view = _pool_view(x, pool)
    arg = view.argmax(axis=-2)  # first index on ties
    out = np.take_along_axis(view, np.expand_dims(arg, -2), axis=-2).squeeze(-2)

    def backward(g):
        gv = np.zeros_like(view)
        np.put_along_axis(gv, np.expand_dims(arg, -2), np.expand_dims(g, -2), axis=-2)
        return (gv.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Channel-wise mean over the sequence axis: ``[..., seq, c] -> [..., c]``."""
    if x.shape[-2] < 1:
        raise ShapeMismatch("global_avg_pool needs seq >= 1")
    return mean(x, axis=-2)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


def cross_entropy(probs: Tensor, gold, clamp: float = 1e-12) -> Tensor:
    """Mean of ``-log(probs[gold])`` over the leading axes, with clamping."""
    gold = np.asarray(gold)
    c = probs.shape[-1]
    if gold.size and (gold.min() < 0 or gold.max() >= c):
        raise IndexError(f"gold index out of range [0, {c})")
    flat = probs.data.reshape(-1, c)
    idx = gold.reshape(-1)
    rows = np.arange(len(idx))
    picked = flat[rows, idx]
    clamped = np.maximum(picked, clamp)
    n = len(idx)
    loss = -np.log(clamped).mean()

    def backward(g):
        gp = np.zeros_like(flat)
        gp[rows, idx] = np.where(picked > clamp, -1.0 / clamped, 0.0) * (g / n)
        return (gp.reshape(probs.shape),)

    return Tensor._from_op(np.asarray(loss, dtype=probs.dtype), (probs,), backward)


def softmax_cross_entropy(logits: Tensor, gold) -> Tensor:
    """Fused softmax + cross-entropy, averaged over examples.

    The gradient w.r.t. the logits is ``(softmax(logits) - one_hot(gold)) / n``.
    """
    gold = np.asarray(gold)
    c = logits.shape[-1]
    if gold.size and (gold.min() < 0 or gold.max() >= c):
        raise IndexError(f"gold index out of range [0, {c})")
    z = logits.data.reshape(-1, c)
    if not np.all(np.isfinite(z)):
        raise NonFiniteInput("softmax_cross_entropy received non-finite logits")
    idx = gold.reshape(-1)
    n = len(idx)
    rows = np.arange(n)
    m = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - m).sum(axis=-1, keepdims=True)) + m
    loss = (lse[:, 0] - z[rows, idx]).mean()
    probs = np.exp(z - lse)

    def backward(g):
        d = probs.copy()
        d[rows, idx] -= 1.0
        return ((d * (g / n)).reshape(logits.shape),)

    return Tensor._from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
