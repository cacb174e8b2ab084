"""Minimal numpy tensor library with reverse-mode autodiff."""
from .gradcheck import grad_check
from .ops import (
    IndivisibleLength,
    NonFiniteInput,
    add,
    avg_pool1d,
    conv1d,
    cross_entropy,
    div,
    dropout,
    embedding,
    exp,
    gelu,
    global_avg_pool,
    layer_norm,
    linear,
    log,
    matmul,
    max_pool1d,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    softmax,
    softmax_cross_entropy,
    sub,
    swap_last,
    tanh,
    transpose,
)
from .ops import sum as sum_  # noqa: F401
from .optim import AdamW, OptimState, adamw_step
from .tensor import ShapeMismatch, Tensor, default_dtype, get_default_dtype, grad_enabled, no_grad

__all__ = [
    "AdamW", "IndivisibleLength", "NonFiniteInput", "OptimState", "ShapeMismatch", "Tensor",
    "adamw_step", "add", "avg_pool1d", "conv1d", "cross_entropy", "default_dtype", "div",
    "dropout", "embedding", "exp", "gelu", "get_default_dtype", "global_avg_pool",
    "grad_check", "grad_enabled", "layer_norm", "linear", "log", "matmul", "max_pool1d",
    "mean", "mul", "neg", "no_grad", "power", "relu", "reshape", "softmax",
    "softmax_cross_entropy", "sub", "sum_", "swap_last", "tanh", "transpose",
]
