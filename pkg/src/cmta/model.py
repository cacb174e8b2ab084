"""Transformer encoder + Dense-CNN classification head.

Input ids pass through token/segment/position embeddings and ``layers``
post-LN encoder blocks. The tapped hidden state (the last layer by default)
goes through three 'same' convolutions with average then max pooling, a global
average pool, and four dense layers ending in a 3-way softmax.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nncore as nn
from .corpus import MisinfoClass
from .nncore import Tensor
from .tokenizer import Vocab, encode_batch


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    max_len: int = 128
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ff_dim: Optional[int] = None
    conv_channels: tuple[int, int, int] = (32, 32, 32)
    conv_kernel: int = 3
    avg_pool: int = 8
    max_pool: int = 8
    dropout: float = 0.36
    dense_dims: tuple[int, int, int, int] = (64, 32, 16, 3)
    num_classes: int = 3
    # hidden-state indices fed to the head (averaged when more than one)
    tap_layers: tuple[int, ...] = (-1,)
    # zero the head's input rows at [PAD] positions
    mask_pad_in_head: bool = True
    ln_eps: float = 1e-5
    init_std: float = 0.02
    dtype: str = "float32"

    def __post_init__(self):
        if self.ff_dim is None:
            self.ff_dim = 4 * self.hidden
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.dense_dims = tuple(int(d) for d in self.dense_dims)
        self.tap_layers = tuple(int(t) for t in self.tap_layers)
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the 4 specials plus at least one token")
        if self.max_len < 3:
            raise ConfigError("max_len must be >= 3")
        if self.max_len % self.avg_pool:
            raise ConfigError(f"max_len {self.max_len} not divisible by avg_pool {self.avg_pool}")
        if (self.max_len // self.avg_pool) % self.max_pool:
            raise ConfigError(
                f"max_len/avg_pool = {self.max_len // self.avg_pool} not divisible by max_pool {self.max_pool}"
            )
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if len(self.conv_channels) != 3:
            raise ConfigError("conv_channels needs exactly 3 entries")
        if self.conv_kernel % 2 != 1:
            raise ConfigError("conv_kernel must be odd")
        if len(self.dense_dims) != 4:
            raise ConfigError("dense_dims needs exactly 4 entries")
        if self.num_classes != 3 or self.dense_dims[-1] != self.num_classes:
            raise ConfigError("the last dense layer must have num_classes == 3 units")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        for t in self.tap_layers:
            if not -(self.layers + 1) <= t <= self.layers:
                raise ConfigError(f"tap layer {t} outside 0..{self.layers}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def full_scale(cls, vocab_size: int, **overrides) -> "ModelConfig":
        base = dict(vocab_size=vocab_size, max_len=128, hidden=768, layers=12, heads=12,
                    conv_channels=(256, 128, 64), dense_dims=(64, 32, 16, 3))
        base.update(overrides)
        return cls(**base)

    @property
    def head_lengths(self) -> tuple[int, int]:
        return self.max_len // self.avg_pool, self.max_len // self.avg_pool // self.max_pool


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Parameter names, shapes and init kinds, in checkpoint order."""
    H, F, k = cfg.hidden, cfg.ff_dim, cfg.conv_kernel
    spec: list[tuple[str, tuple[int, ...], str]] = [
        ("embed.token", (cfg.vocab_size, H), "normal"),
        ("embed.segment", (2, H), "normal"),
        ("embed.position", (cfg.max_len, H), "normal"),
        ("embed.ln.gamma", (H,), "ones"),
        ("embed.ln.beta", (H,), "zeros"),
    ]
    for i in range(cfg.layers):
        p = f"encoder.{i}."
        for name in ("q", "k", "v", "o"):
            spec.append((p + f"attn.w{name}", (H, H), "normal"))
            spec.append((p + f"attn.b{name}", (H,), "zeros"))
        spec += [
            (p + "ln1.gamma", (H,), "ones"),
            (p + "ln1.beta", (H,), "zeros"),
            (p + "ff.w1", (H, F), "normal"),
            (p + "ff.b1", (F,), "zeros"),
            (p + "ff.w2", (F, H), "normal"),
            (p + "ff.b2", (H,), "zeros"),
            (p + "ln2.gamma", (H,), "ones"),
            (p + "ln2.beta", (H,), "zeros"),
        ]
    c_in = H
    for i, c_out in enumerate(cfg.conv_channels, start=1):
        spec.append((f"head.conv{i}.kernel", (k, c_in, c_out), "he"))
        spec.append((f"head.conv{i}.bias", (c_out,), "zeros"))
        c_in = c_out
    d_in = cfg.conv_channels[-1]
    for i, d_out in enumerate(cfg.dense_dims, start=1):
        spec.append((f"head.dense{i}.weight", (d_in, d_out), "he"))
        spec.append((f"head.dense{i}.bias", (d_out,), "zeros"))
        d_in = d_out
    return spec


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    dtype = np.dtype(cfg.dtype)
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in _param_shapes(cfg):
        if kind == "normal":
            arr = rng.normal(0.0, cfg.init_std, shape)
        elif kind == "he":
            fan_in = int(np.prod(shape[:-1]))
            arr = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(dtype)
    return params


class CMTAModel:
    """Parameters plus the forward pieces; all methods take batched arrays ``[B, T]``."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        expected = _param_shapes(config)
        missing = [n for n, _, _ in expected if n not in params]
        if missing:
            raise ConfigError(f"missing parameters: {missing[:3]}...")
        for name, shape, _ in expected:
            if tuple(params[name].shape) != shape:
                raise ConfigError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params: dict[str, Tensor] = {
            name: Tensor(params[name], requires_grad=True, name=name) for name, _, _ in expected
        }
        self.meta: dict = {}

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int | np.random.Generator = 0) -> "CMTAModel":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(config, init_params(config, rng))

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            t.data = np.array(state[k], dtype=t.data.dtype, copy=True)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    # -- forward pieces ---------------------------------------------------
    def embed_inputs(self, ids: np.ndarray, segment_ids: np.ndarray | None = None) -> Tensor:
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise IndexError(f"token id outside [0, {self.config.vocab_size})")
        if segment_ids is None:
            segment_ids = np.zeros_like(ids)
        T = ids.shape[-1]
        if T > self.config.max_len:
            raise nn.ShapeMismatch(f"sequence length {T} exceeds max_len {self.config.max_len}")
        p = self.params
        x = nn.embedding(p["embed.token"], ids) + nn.embedding(p["embed.segment"], segment_ids)
        x = x + nn.embedding(p["embed.position"], np.arange(T))
        return nn.layer_norm(x, p["embed.ln.gamma"], p["embed.ln.beta"], self.config.ln_eps)

    def attention(self, x: Tensor, mask: np.ndarray, layer: int) -> Tensor:
        cfg, p = self.config, self.params
        pre = f"encoder.{layer}.attn."
        B, T, H = x.shape
        h = cfg.heads
        d = H // h

        def heads(t: Tensor) -> Tensor:
            return nn.transpose(nn.reshape(t, (B, T, h, d)), (0, 2, 1, 3))

        q = heads(nn.linear(x, p[pre + "wq"], p[pre + "bq"]))
        k = heads(nn.linear(x, p[pre + "wk"], p[pre + "bk"]))
        v = heads(nn.linear(x, p[pre + "wv"], p[pre + "bv"]))
        scores = nn.matmul(q, nn.swap_last(k)) * (1.0 / math.sqrt(d))
        key_mask = np.asarray(mask, dtype=bool)[:, None, None, :]
        attn = nn.softmax(scores, axis=-1, key_mask=key_mask)
        ctx = nn.reshape(nn.transpose(nn.matmul(attn, v), (0, 2, 1, 3)), (B, T, H))
        return nn.linear(ctx, p[pre + "wo"], p[pre + "bo"])

    def encoder_layer(self, x: Tensor, mask: np.ndarray, layer: int) -> Tensor:
        p, eps = self.params, self.config.ln_eps
        pre = f"encoder.{layer}."
        x = nn.layer_norm(x + self.attention(x, mask, layer), p[pre + "ln1.gamma"], p[pre + "ln1.beta"], eps)
        ff = nn.linear(nn.gelu(nn.linear(x, p[pre + "ff.w1"], p[pre + "ff.b1"])), p[pre + "ff.w2"], p[pre + "ff.b2"])
        return nn.layer_norm(x + ff, p[pre + "ln2.gamma"], p[pre + "ln2.beta"], eps)

    def encoder_forward(self, embeddings: Tensor, mask: np.ndarray) -> list[Tensor]:
        """All hidden states: index 0 is the embeddings, index i the output of layer i."""
        if embeddings.ndim != 3 or embeddings.shape[-1] != self.config.hidden:
            raise nn.ShapeMismatch(f"encoder expects [B, T, {self.config.hidden}], got {embeddings.shape}")
        if np.shape(mask) != embeddings.shape[:2]:
            raise nn.ShapeMismatch(f"mask shape {np.shape(mask)} vs embeddings {embeddings.shape[:2]}")
        states = [embeddings]
        x = embeddings
        for i in range(self.config.layers):
            x = self.encoder_layer(x, mask, i)
            states.append(x)
        return states

    def select_state(self, states: Sequence[Tensor]) -> Tensor:
        taps = [states[t] for t in self.config.tap_layers]
        out = taps[0]
        for t in taps[1:]:
            out = out + t
        if len(taps) > 1:
            out = out * (1.0 / len(taps))
        return out

    def conv_head_forward(self, state: Tensor, mask: np.ndarray | None = None, training: bool = False,
                          rng: np.random.Generator | None = None, trace: list | None = None) -> Tensor:
        """``[B, T, H] -> [B, C3]``. ``trace`` (if given) collects intermediate shapes."""
        cfg, p = self.config, self.params
        x = state
        if cfg.mask_pad_in_head and mask is not None:
            x = x * np.asarray(mask, dtype=x.dtype)[..., None]
        x = nn.relu(nn.conv1d(x, p["head.conv1.kernel"], p["head.conv1.bias"]))
        x = nn.avg_pool1d(x, cfg.avg_pool)
        if trace is not None:
            trace.append(x.shape)
        x = nn.relu(nn.conv1d(x, p["head.conv2.kernel"], p["head.conv2.bias"]))
        x = nn.max_pool1d(x, cfg.max_pool)
        if trace is not None:
            trace.append(x.shape)
        x = nn.relu(nn.conv1d(x, p["head.conv3.kernel"], p["head.conv3.bias"]))
        x = nn.global_avg_pool(x)
        if trace is not None:
            trace.append(x.shape)
        return nn.dropout(x, cfg.dropout, training, rng)

    def classify_logits(self, sentence_repr: Tensor, training: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
        if not np.all(np.isfinite(sentence_repr.data)):
            raise nn.NonFiniteInput("sentence representation has non-finite entries")
        p = self.params
        x = sentence_repr
        n = len(self.config.dense_dims)
        for i in range(1, n + 1):
            x = nn.linear(x, p[f"head.dense{i}.weight"], p[f"head.dense{i}.bias"])
            if i < n:
                x = nn.dropout(nn.relu(x), self.config.dropout, training, rng)
        return x

    def classify(self, sentence_repr: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        """Class probabilities in :class:`MisinfoClass` index order."""
        return nn.softmax(self.classify_logits(sentence_repr, training, rng))

    def forward(self, ids: np.ndarray, segment_ids: np.ndarray | None, mask: np.ndarray,
                training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Logits ``[B, 3]``."""
        states = self.encoder_forward(self.embed_inputs(ids, segment_ids), mask)
        rep = self.conv_head_forward(self.select_state(states), mask, training, rng)
        return self.classify_logits(rep, training, rng)

    def predict_proba(self, ids: np.ndarray, segment_ids: np.ndarray | None, mask: np.ndarray) -> np.ndarray:
        with nn.no_grad():
            return nn.softmax(self.forward(ids, segment_ids, mask)).data


def texts_to_arrays(texts: Sequence[str], vocab: Vocab, max_len: int):
    return encode_batch(texts, vocab, max_len)


def predict(text: str, vocab: Vocab, model: CMTAModel, stopwords=None,
            language: str = "en") -> tuple[MisinfoClass, np.ndarray]:
    """Clean, encode and classify one text in eval mode."""
    from .preprocess import StopwordTable, clean_text

    table = stopwords if stopwords is not None else StopwordTable()
    cleaned = clean_text(text, language, table).text
    ids, segs, mask = encode_batch([cleaned], vocab, model.config.max_len)
    probs = model.predict_proba(ids, segs, mask)[0]
    return MisinfoClass(int(np.argmax(probs))), probs
