from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, default_dtype, no_grad


def grad_check(fn: Callable[..., Tensor], inputs: Sequence, eps: float = 1e-4) -> float:
    """Compare reverse-mode gradients of a scalar ``fn`` with central differences.

    ``fn`` is called with one :class:`Tensor` per entry of ``inputs`` and must
    return a scalar tensor. Everything runs in float64. Returns the max over
    all input coordinates of ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    base = [np.array(x, dtype=np.float64) for x in inputs]
    with default_dtype(np.float64):
        tensors = [Tensor(x.copy(), requires_grad=True) for x in base]
        out = fn(*tensors)
        if out.data.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        out.backward()
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

        def evaluate(arrays) -> float:
            with no_grad():
                return float(fn(*[Tensor(a) for a in arrays]).data)

        worst = 0.0
        for i, x in enumerate(base):
            flat = x.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                f_plus = evaluate(base)
                flat[j] = orig - eps
                f_minus = evaluate(base)
                flat[j] = orig
                numeric = (f_plus - f_minus) / (2 * eps)
                a = float(analytic[i].reshape(-1)[j])
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
