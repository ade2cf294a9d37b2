"""Scaled dot-product and multi-head attention, post-norm encoder layers,
sinusoidal positions.

Masks are boolean arrays where ``True`` marks a blocked key. Blocked keys
get an additive ``-1e30`` logit, which underflows to an exact zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import FFN, LayerNorm, Module, ops
from .autodiff.nn import uniform_weight
from .autodiff.tensor import ContractError, ShapeError, Tensor

NEG_INF = -1e30


@dataclass(frozen=True)
class MultiHeadConfig:
    dim: int
    heads: int
    ffn_dim: int
    layers: int = 1
    head_dim_qk: int | None = None
    head_dim_v: int | None = None

    @property
    def d_qk(self) -> int:
        return self.head_dim_qk or self.dim // self.heads

    @property
    def d_v(self) -> int:
        return self.head_dim_v or self.dim // self.heads

    def __post_init__(self):
        if self.head_dim_qk is None and self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")


def attention(q: Tensor, k: Tensor, v: Tensor, key_padding_mask=None, attn_mask=None) -> Tensor:
    """Softmax(q k^T / sqrt(d_k)) v over the last two axes.

    ``key_padding_mask`` has shape [..., Lk]; ``attn_mask`` broadcasts to
    [..., Lq, Lk]. Every query must keep at least one key.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    scores = ops.mul(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / np.sqrt(q.shape[-1]))
    blocked = combine_masks(key_padding_mask, attn_mask)
    if blocked is not None:
        full = np.broadcast_to(blocked, scores.shape)
        if full.all(axis=-1).any():
            raise ContractError("attention: some query has every key masked")
        scores = ops.add(scores, np.where(blocked, NEG_INF, 0.0))
    return ops.matmul(ops.softmax(scores, axis=-1), v)


def combine_masks(key_padding_mask=None, attn_mask=None):
    blocked = None
    if key_padding_mask is not None:
        blocked = np.asarray(key_padding_mask, dtype=bool)[..., None, :]
    if attn_mask is not None:
        am = np.asarray(attn_mask, dtype=bool)
        blocked = am if blocked is None else (blocked | am)
    return blocked


class MultiHeadAttention(Module):
    def __init__(self, rng: np.random.Generator, cfg: MultiHeadConfig):
        h, d = cfg.heads, cfg.dim
        self.heads = h
        self.d_qk, self.d_v = cfg.d_qk, cfg.d_v
        self.w_q = uniform_weight(rng, d, (d, h * cfg.d_qk))
        self.w_k = uniform_weight(rng, d, (d, h * cfg.d_qk))
        self.w_v = uniform_weight(rng, d, (d, h * cfg.d_v))
        self.w_h = uniform_weight(rng, h * cfg.d_v, (h * cfg.d_v, d))

    def __call__(self, x_q: Tensor, x_k: Tensor, x_v: Tensor, key_padding_mask=None, attn_mask=None) -> Tensor:
        return multi_head(x_q, x_k, x_v, self, key_padding_mask, attn_mask)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # [..., L, H*d] -> [..., H, L, d]
    lead = x.shape[:-1]
    x = ops.reshape(x, lead + (heads, x.shape[-1] // heads))
    return ops.swapaxes(x, -2, -3)


def multi_head(x_q: Tensor, x_k: Tensor, x_v: Tensor, weights: MultiHeadAttention,
               key_padding_mask=None, attn_mask=None) -> Tensor:
    """Concat(a_1..a_H) W_H with a_i = attention(x_q W_Qi, x_k W_Ki, x_v W_Vi)."""
    for x in (x_q, x_k, x_v):
        if x.shape[-1] != weights.w_q.shape[0]:
            raise ShapeError(f"input dim {x.shape[-1]} != model dim {weights.w_q.shape[0]}")
    h = weights.heads
    q = _split_heads(ops.matmul(x_q, weights.w_q), h)
    k = _split_heads(ops.matmul(x_k, weights.w_k), h)
    v = _split_heads(ops.matmul(x_v, weights.w_v), h)
    blocked = combine_masks(key_padding_mask, attn_mask)
    if blocked is not None:
        blocked = blocked[..., None, :, :]  # broadcast over heads
    a = attention(q, k, v, attn_mask=blocked)
    a = ops.swapaxes(a, -2, -3)
    a = ops.reshape(a, a.shape[:-2] + (h * weights.d_v,))
    return ops.matmul(a, weights.w_h)


class EncoderLayer(Module):
    """Post-norm block: LN(v + MA(x)) -> LN(h + FFN(h)).

    With ``x_qk`` given, queries and keys come from ``x_qk`` while values
    and the residual come from ``x``; this is the decoder form with
    position codes on Q/K only.
    """

    def __init__(self, rng: np.random.Generator, cfg: MultiHeadConfig, eps: float = 1e-5):
        self.attn = MultiHeadAttention(rng, cfg)
        self.norm1 = LayerNorm(cfg.dim, eps)
        self.ffn = FFN(rng, cfg.dim, cfg.ffn_dim, cfg.dim)
        self.norm2 = LayerNorm(cfg.dim, eps)

    def __call__(self, x: Tensor, key_padding_mask=None, attn_mask=None, x_qk: Tensor | None = None) -> Tensor:
        qk = x if x_qk is None else x_qk
        h = self.norm1(ops.add(x, self.attn(qk, qk, x, key_padding_mask, attn_mask)))
        return self.norm2(ops.add(h, self.ffn(h)))


def encoder_layer(x: Tensor, layer: EncoderLayer, key_padding_mask=None, attn_mask=None) -> Tensor:
    return layer(x, key_padding_mask=key_padding_mask, attn_mask=attn_mask)


class Encoder(Module):
    def __init__(self, rng: np.random.Generator, cfg: MultiHeadConfig):
        self.layers = [EncoderLayer(rng, cfg) for _ in range(cfg.layers)]

    def __call__(self, x: Tensor, key_padding_mask=None, attn_mask=None) -> Tensor:
        for layer in self.layers:
            x = layer(x, key_padding_mask, attn_mask)
        return x


@dataclass
class PositionalEncoding:
    kind: str  # "sinusoidal" (fixed) or "learned"
    values: np.ndarray | Tensor

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def sinusoidal_positions(length: int, dim: int) -> PositionalEncoding:
    if dim % 2:
        raise ContractError(f"sinusoidal positions need an even dim, got {dim}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return PositionalEncoding("sinusoidal", pe)
