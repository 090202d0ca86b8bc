"""Dense float32 kernels shared by the encoder and decoder.

Everything here is stateless; a "matrix" is a 2-D float32 ndarray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFinite, ShapeMismatch

LN_EPS = 1e-5


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch(f"weight {self.weight.shape} / bias {self.bias.shape}")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"input has {x.shape[-1]} features, layer expects {self.in_features}")
        return x @ self.weight.T + self.bias


@dataclass
class LayerNorm:
    gain: np.ndarray
    shift: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return layer_norm(x, self.gain, self.shift)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    if m.size == 0:
        raise ValueError("softmax_rows needs a nonempty matrix")
    if not np.all(np.isfinite(m)):
        raise NonFinite("softmax input contains NaN or Inf")
    return _softmax(m)


def _softmax(m: np.ndarray) -> np.ndarray:
    # -inf entries are allowed here (masked logits); each row needs one finite entry
    e = np.exp(m - m.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(m: np.ndarray) -> np.ndarray:
    shifted = m - m.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    if gain.shape[-1] != x.shape[-1] or shift.shape[-1] != x.shape[-1]:
        raise ShapeMismatch(f"gain/shift length {gain.shape[-1]} vs {x.shape[-1]} columns")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * gain + shift


@dataclass
class MultiHeadAttention:
    q: LinearLayer
    k: LinearLayer
    v: LinearLayer
    out: LinearLayer
    heads: int

    def project_kv(self, kv_input: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.k(kv_input), self.v(kv_input)

    def __call__(self, query: np.ndarray, kv_input: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        keys, values = self.project_kv(kv_input)
        return self.attend(query, keys, values, mask)

    def attend(self, query: np.ndarray, keys: np.ndarray, values: np.ndarray,
               mask: np.ndarray | None) -> np.ndarray:
        """Attention with already-projected keys and values."""
        return _attend(self.q(query), keys, values, self.heads, mask, self.out)


def _attend(q, k, v, heads, mask, out_proj):
    t_q, d = q.shape
    t_k = k.shape[0]
    if d % heads:
        raise ShapeMismatch(f"model dim {d} not divisible by {heads} heads")
    if mask is not None and mask.shape != (t_q, t_k):
        raise ShapeMismatch(f"mask {mask.shape} vs attention {(t_q, t_k)}")
    dk = d // heads
    qh = q.reshape(t_q, heads, dk).transpose(1, 0, 2)
    kh = k.reshape(t_k, heads, dk).transpose(1, 0, 2)
    vh = v.reshape(t_k, heads, dk).transpose(1, 0, 2)
    logits = (qh @ kh.transpose(0, 2, 1)) * np.float32(1.0 / math.sqrt(dk))
    if mask is not None:
        logits = np.where(mask[None], logits, np.float32(-np.inf))
    weights = _softmax(logits)
    ctx = (weights @ vh).transpose(1, 0, 2).reshape(t_q, d)
    return out_proj(ctx)


def masked_mha(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int, mask: np.ndarray,
               params: MultiHeadAttention) -> np.ndarray:
    """Multi-head attention of queries ``q`` over keys ``k`` / values ``v``.

    Masked-out logits are set to -inf before the softmax so those positions
    get exactly zero weight.
    """
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"{k.shape[0]} keys vs {v.shape[0]} values")
    return _attend(params.q(q), params.k(k), params.v(v), heads, mask, params.out)


@dataclass
class FeedForward:
    w1: LinearLayer
    w2: LinearLayer

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.w2(np.maximum(self.w1(x), 0))


def positional_encoding(length: int, d_model: int, offset: int = 0) -> np.ndarray:
    """Sinusoidal absolute positions ``offset .. offset+length-1``."""
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, d_model, 2, dtype=np.float64) * -(math.log(10000.0) / d_model))
    pe = np.zeros((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d_model // 2]
    return pe.astype(np.float32)
