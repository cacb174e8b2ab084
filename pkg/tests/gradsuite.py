"""Random-shape gradient-check cases shared by the unit and acceptance tests."""
from __future__ import annotations

import numpy as np

from cmta import nncore as nn
from cmta.model import CMTAModel, ModelConfig

SHAPES_PER_OP = 20


def _away_from_zero(rng, shape, margin=0.05):
    # central differences carry an O(eps^2) term that swamps tiny true gradients near 0
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + 0.0


def _project(out: nn.Tensor, w: np.ndarray) -> nn.Tensor:
    """Scalar ``sum(out * w)`` so every output coordinate matters."""
    return nn.sum_(out * nn.Tensor(w))


def _shape(rng, ndim_lo=1, ndim_hi=3, lo=1, hi=4):
    return tuple(int(d) for d in rng.integers(lo, hi + 1, size=int(rng.integers(ndim_lo, ndim_hi + 1))))


def _unary(fn, make=lambda rng, s: rng.normal(size=s)):
    def gen(rng):
        s = _shape(rng)
        w = rng.normal(size=s)
        return (lambda x: _project(fn(x), w)), [make(rng, s)]
    return gen


def _binary(fn, make_b=lambda rng, s: rng.normal(size=s)):
    def gen(rng):
        s = _shape(rng, 2, 3)
        # broadcast the second operand along a random subset of axes
        sb = tuple(1 if rng.random() < 0.3 else d for d in s)
        w = rng.normal(size=s)
        return (lambda a, b: _project(fn(a, b), w)), [rng.normal(size=s), make_b(rng, sb)]
    return gen


def _sum(rng):
    s = _shape(rng, 2, 3)
    axis = int(rng.integers(-len(s), len(s)))
    keep = bool(rng.random() < 0.5)
    w = rng.normal(size=np.sum(np.zeros(s), axis=axis, keepdims=keep).shape)
    return (lambda x: _project(nn.sum_(x, axis=axis, keepdims=keep), w)), [rng.normal(size=s)]


def _mean(rng):
    s = _shape(rng, 2, 3)
    axis = int(rng.integers(-len(s), len(s)))
    w = rng.normal(size=np.mean(np.zeros(s), axis=axis).shape)
    return (lambda x: _project(nn.mean(x, axis=axis), w)), [rng.normal(size=s)]


def _reshape(rng):
    s = _shape(rng, 2, 3)
    target = (int(np.prod(s)),)
    w = rng.normal(size=target)
    return (lambda x: _project(nn.reshape(x, target), w)), [rng.normal(size=s)]


def _transpose(rng):
    s = _shape(rng, 2, 4)
    axes = tuple(int(a) for a in rng.permutation(len(s)))
    w = rng.normal(size=tuple(s[a] for a in axes))
    return (lambda x: _project(nn.transpose(x, axes), w)), [rng.normal(size=s)]


def _swap_last(rng):
    s = _shape(rng, 2, 3)
    w = rng.normal(size=s[:-2] + (s[-1], s[-2]))
    return (lambda x: _project(nn.swap_last(x), w)), [rng.normal(size=s)]


def _matmul(rng):
    batch = _shape(rng, 0, 2, 1, 3)
    m, k, n = (int(v) for v in rng.integers(1, 5, size=3))
    w = rng.normal(size=batch + (m, n))
    return (lambda a, b: _project(nn.matmul(a, b), w)), [rng.normal(size=batch + (m, k)), rng.normal(size=batch + (k, n))]


def _linear(rng):
    lead = _shape(rng, 1, 2)
    i, o = (int(v) for v in rng.integers(1, 6, size=2))
    w = rng.normal(size=lead + (o,))
    return (lambda x, W, b: _project(nn.linear(x, W, b), w)), \
        [rng.normal(size=lead + (i,)), rng.normal(size=(i, o)), rng.normal(size=(o,))]


def _embedding(rng):
    v, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
    ids = rng.integers(0, v, size=_shape(rng, 1, 2))  # repeats exercise accumulation
    w = rng.normal(size=ids.shape + (d,))
    return (lambda W: _project(nn.embedding(W, ids), w)), [rng.normal(size=(v, d))]


def _layer_norm(rng):
    s = _shape(rng, 1, 3, 2, 5)
    d = s[-1]
    w = rng.normal(size=s)
    return (lambda x, g, b: _project(nn.layer_norm(x, g, b), w)), \
        [rng.normal(size=s), rng.normal(size=(d,)), rng.normal(size=(d,))]


def _softmax(rng):
    s = _shape(rng, 1, 3, 2, 5)
    axis = int(rng.integers(-len(s), len(s)))
    w = rng.normal(size=s)
    return (lambda x: _project(nn.softmax(x, axis=axis), w)), [rng.normal(size=s)]


def _masked_softmax(rng):
    b, t = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    mask = rng.random((b, 1, t)) < 0.7
    mask[..., 0] = True
    w = rng.normal(size=(b, t, t))
    return (lambda x: _project(nn.softmax(x, axis=-1, key_mask=mask), w)), [rng.normal(size=(b, t, t))]


def _conv1d(rng):
    lead = _shape(rng, 0, 1, 1, 3)
    seq = int(rng.integers(1, 7))
    k = int(rng.choice([1, 3, 5]))
    ci, co = (int(v) for v in rng.integers(1, 4, size=2))
    w = rng.normal(size=lead + (seq, co))
    return (lambda x, K, b: _project(nn.conv1d(x, K, b), w)), \
        [rng.normal(size=lead + (seq, ci)), rng.normal(size=(k, ci, co)), rng.normal(size=(co,))]


def _pool(op):
    def gen(rng):
        pool = int(rng.integers(1, 4))
        b, n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        w = rng.normal(size=(b, n, c))
        return (lambda x: _project(op(x, pool), w)), [rng.normal(size=(b, n * pool, c))]
    return gen


def _global_avg_pool(rng):
    b, t, c = (int(v) for v in rng.integers(1, 5, size=3))
    w = rng.normal(size=(b, c))
    return (lambda x: _project(nn.global_avg_pool(x), w)), [rng.normal(size=(b, t, c))]


def _dropout(rng):
    s = _shape(rng)
    p = float(rng.uniform(0.1, 0.6))
    seed = int(rng.integers(1 << 30))
    w = rng.normal(size=s)
    # a fresh generator per call keeps the mask fixed across finite-difference probes
    return (lambda x: _project(nn.dropout(x, p, True, np.random.default_rng(seed)), w)), [rng.normal(size=s)]


def _cross_entropy(rng):
    b, c = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    gold = rng.integers(0, c, size=b)
    return (lambda z: nn.cross_entropy(nn.softmax(z), gold)), [rng.normal(size=(b, c))]


def _softmax_cross_entropy(rng):
    b, c = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    gold = rng.integers(0, c, size=b)
    return (lambda z: nn.softmax_cross_entropy(z, gold)), [rng.normal(size=(b, c))]


OP_CASES = {
    "add": _binary(nn.add),
    "sub": _binary(nn.sub),
    "mul": _binary(nn.mul),
    "div": _binary(nn.div, lambda rng, s: rng.uniform(0.5, 2.0, size=s) * rng.choice([-1, 1], size=s)),
    "neg": _unary(nn.neg),
    "power": _unary(lambda x: nn.power(x, 3.0), lambda rng, s: _away_from_zero(rng, s, 0.1)),
    "exp": _unary(nn.exp),
    "log": _unary(nn.log, lambda rng, s: rng.uniform(0.5, 3.0, size=s)),
    "tanh": _unary(nn.tanh),
    "relu": _unary(nn.relu, _away_from_zero),
    "gelu": _unary(nn.gelu),
    "sum": _sum,
    "mean": _mean,
    "reshape": _reshape,
    "transpose": _transpose,
    "swap_last": _swap_last,
    "matmul": _matmul,
    "linear": _linear,
    "embedding": _embedding,
    "layer_norm": _layer_norm,
    "softmax": _softmax,
    "masked_softmax": _masked_softmax,
    "conv1d": _conv1d,
    "avg_pool1d": _pool(nn.avg_pool1d),
    "max_pool1d": _pool(nn.max_pool1d),
    "global_avg_pool": _global_avg_pool,
    "dropout": _dropout,
    "cross_entropy": _cross_entropy,
    "softmax_cross_entropy": _softmax_cross_entropy,
}


def op_errors(name: str, seed: int = 0, shapes: int = SHAPES_PER_OP) -> list[float]:
    rng = np.random.default_rng([seed, sorted(OP_CASES).index(name)])
    errs = []
    for _ in range(shapes):
        fn, inputs = OP_CASES[name](rng)
        errs.append(nn.grad_check(fn, inputs))
    return errs


def head_errors(seed: int = 0, shapes: int = SHAPES_PER_OP) -> list[float]:
    """Composed conv head + dense classifier + loss, gradient w.r.t. its input state."""
    rng = np.random.default_rng([seed, 991])
    errs = []
    for i in range(shapes):
        max_len = int(rng.choice([8, 16]))
        hidden = int(rng.choice([4, 8]))
        cfg = ModelConfig(vocab_size=8, max_len=max_len, hidden=hidden, layers=1, heads=1,
                          conv_channels=(3, 3, 3), avg_pool=2, max_pool=2,
                          dense_dims=(6, 5, 4, 3), dtype="float64")
        model = CMTAModel.initialize(cfg, np.random.default_rng([seed, i]))
        b = int(rng.integers(1, 3))
        gold = rng.integers(0, 3, size=b)
        mask = np.ones((b, max_len), dtype=bool)
        mask[:, int(rng.integers(2, max_len)):] = rng.random() < 0.5
        state = rng.normal(size=(b, max_len, hidden))

        def fn(x):
            rep = model.conv_head_forward(x, mask)
            return nn.cross_entropy(model.classify(rep), gold)

        errs.append(nn.grad_check(fn, [state]))
    return errs
