"""Shared encoder: x4 conv subsampling + pre-norm transformer layers under a chunk mask.

:meth:`Encoder.encode_chunk` is the streaming entry point. It processes one
chunk of ``C`` encoder positions at a time and keeps per-layer key/value
caches, so the rows it emits match :meth:`Encoder.encode_full` with the same
chunk size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, StateCorrupt, TooShort
from .masking import FULL, chunk_mask, validate_chunk
from .nn import FeedForward, LayerNorm, LinearLayer, MultiHeadAttention, positional_encoding

SUBSAMPLE_RATE = 4
LOOKAHEAD_FRAMES = 6
MIN_FRAMES = 7
CONV_KERNEL = 3
CONV_STRIDE = 2


@dataclass
class EncoderConfig:
    num_layers: int = 2
    d_model: int = 16
    heads: int = 2
    d_ffn: int = 64
    input_dim: int = 80
    subsample_rate: int = SUBSAMPLE_RATE
    lookahead_frames: int = LOOKAHEAD_FRAMES

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.subsample_rate != SUBSAMPLE_RATE or self.lookahead_frames != LOOKAHEAD_FRAMES:
            raise ValueError("conv subsampling is fixed at rate 4 with 6 frames of lookahead")

    @property
    def conv_freq_out(self) -> int:
        f = self.input_dim
        for _ in range(2):
            f = (f - CONV_KERNEL) // CONV_STRIDE + 1
        return f


def subsampled_length(num_frames: int) -> int:
    """Encoder positions produced from ``num_frames`` feature frames."""
    if num_frames < MIN_FRAMES:
        return 0
    return ((num_frames - 1) // 2 - 1) // 2


def _conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 stride-2 valid convolution, channels-last: (T, F, Cin) -> (T', F', Cout)."""
    cout, cin = weight.shape[:2]
    patches = np.lib.stride_tricks.sliding_window_view(x, (CONV_KERNEL, CONV_KERNEL), axis=(0, 1))
    patches = patches[::CONV_STRIDE, ::CONV_STRIDE]  # (T', F', Cin, 3, 3)
    t_out, f_out = patches.shape[:2]
    cols = np.ascontiguousarray(patches).reshape(t_out * f_out, cin * CONV_KERNEL * CONV_KERNEL)
    y = cols @ weight.reshape(cout, -1).T + bias
    return y.reshape(t_out, f_out, cout)


@dataclass
class ConvSubsampling:
    conv1_weight: np.ndarray  # (C, 1, 3, 3)
    conv1_bias: np.ndarray
    conv2_weight: np.ndarray  # (C, C, 3, 3)
    conv2_bias: np.ndarray
    out: LinearLayer  # C * F'' -> d_model

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        if feats.shape[0] < MIN_FRAMES:
            raise TooShort(f"{feats.shape[0]} feature frames, subsampling needs at least {MIN_FRAMES}")
        h = np.maximum(_conv2d(feats[:, :, None], self.conv1_weight, self.conv1_bias), 0)
        h = np.maximum(_conv2d(h, self.conv2_weight, self.conv2_bias), 0)
        t = h.shape[0]
        # flatten channel-major: (T, C, F'')
        return self.out(np.ascontiguousarray(h.transpose(0, 2, 1)).reshape(t, -1))


@dataclass
class EncoderLayer:
    norm1: LayerNorm
    self_attn: MultiHeadAttention
    norm2: LayerNorm
    ffn: FeedForward

    def __call__(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        xn = self.norm1(x)
        x = x + self.self_attn(xn, xn, mask)
        return x + self.ffn(self.norm2(x))

    def forward_cached(self, x: np.ndarray, cache_k: np.ndarray, cache_v: np.ndarray):
        """Run one chunk whose queries see every cached position plus the chunk itself."""
        xn = self.norm1(x)
        k_new, v_new = self.self_attn.project_kv(xn)
        keys = np.concatenate([cache_k, k_new])
        values = np.concatenate([cache_v, v_new])
        x = x + self.self_attn.attend(xn, keys, values, None)
        return x + self.ffn(self.norm2(x)), keys, values


@dataclass
class EncoderState:
    """Streaming state owned by a single session."""

    num_layers: int
    d_model: int
    frames_received: int = 0
    pending_offset: int = 0  # feature-frame index of pending[0]
    positions_emitted: int = 0
    finished: bool = False
    pending: np.ndarray = None
    k_cache: list = field(default_factory=list)
    v_cache: list = field(default_factory=list)

    def __post_init__(self):
        if self.pending is None:
            self.pending = np.zeros((0, 80), dtype=np.float32)
        if not self.k_cache:
            empty = np.zeros((0, self.d_model), dtype=np.float32)
            self.k_cache = [empty] * self.num_layers
            self.v_cache = [empty] * self.num_layers

    def check(self) -> None:
        lens = {c.shape[0] for c in self.k_cache} | {c.shape[0] for c in self.v_cache}
        if lens != {self.positions_emitted}:
            raise StateCorrupt(f"cache lengths {sorted(lens)} vs {self.positions_emitted} emitted positions")
        if self.pending_offset != SUBSAMPLE_RATE * self.positions_emitted and not self.finished:
            raise StateCorrupt(f"pending offset {self.pending_offset} vs {self.positions_emitted} positions")
        if self.pending_offset + self.pending.shape[0] != self.frames_received:
            raise StateCorrupt("pending frames do not account for all received frames")


class Encoder:
    def __init__(self, cfg: EncoderConfig, embed: ConvSubsampling, layers: list[EncoderLayer],
                 final_norm: LayerNorm):
        if len(layers) != cfg.num_layers:
            raise ShapeMismatch(f"{len(layers)} layers for num_layers={cfg.num_layers}")
        self.cfg = cfg
        self.embed = embed
        self.layers = layers
        self.final_norm = final_norm

    def subsample(self, feats: np.ndarray) -> np.ndarray:
        return self.embed(feats)

    def _embed(self, feats: np.ndarray, offset: int) -> np.ndarray:
        x = self.embed(feats)
        return x + positional_encoding(x.shape[0], self.cfg.d_model, offset)

    def encode_full(self, feats: np.ndarray, chunk_size: int = FULL) -> np.ndarray:
        """One-shot encoding of a whole utterance, ``(T', d_model)``."""
        validate_chunk(chunk_size)
        if feats.ndim != 2 or feats.shape[1] != self.cfg.input_dim:
            raise ShapeMismatch(f"features {feats.shape}, expected (T, {self.cfg.input_dim})")
        x = self._embed(feats, 0)
        mask = chunk_mask(x.shape[0], chunk_size)
        for layer in self.layers:
            x = layer(x, mask)
        return self.final_norm(x)

    def init_state(self) -> EncoderState:
        return EncoderState(self.cfg.num_layers, self.cfg.d_model,
                            pending=np.zeros((0, self.cfg.input_dim), dtype=np.float32))

    def encode_chunk(self, state: EncoderState, new_feats: np.ndarray, chunk_size: int,
                     is_last: bool = False) -> np.ndarray:
        """Consume ``new_feats`` and return every encoder row that became computable.

        ``state`` is updated in place. A chunk of ``C`` positions is emitted once
        its ``4*C + 3`` input frames are buffered; ``is_last`` flushes the
        remaining (possibly shorter) tail chunk.
        """
        validate_chunk(chunk_size)
        if chunk_size == FULL:
            raise ValueError("encode_chunk needs a finite chunk size; use encode_full for FULL")
        state.check()
        if state.finished:
            raise StateCorrupt("encoder state already flushed")
        if new_feats.shape[0] == 0 and not is_last:
            return np.zeros((0, self.cfg.d_model), dtype=np.float32)
        if new_feats.ndim != 2 or new_feats.shape[1] != self.cfg.input_dim:
            raise ShapeMismatch(f"features {new_feats.shape}, expected (T, {self.cfg.input_dim})")

        state.pending = np.concatenate([state.pending, new_feats.astype(np.float32, copy=False)])
        state.frames_received += new_feats.shape[0]

        out = []
        need = SUBSAMPLE_RATE * chunk_size + (MIN_FRAMES - SUBSAMPLE_RATE)
        while state.pending.shape[0] >= need:
            out.append(self._forward_chunk(state, chunk_size))
        if is_last:
            tail = subsampled_length(state.pending.shape[0])
            if tail:
                out.append(self._forward_chunk(state, tail))
            state.finished = True
        state.check()
        if not out:
            return np.zeros((0, self.cfg.d_model), dtype=np.float32)
        return np.concatenate(out)

    def _forward_chunk(self, state: EncoderState, n: int) -> np.ndarray:
        frames = state.pending[: SUBSAMPLE_RATE * n + MIN_FRAMES - SUBSAMPLE_RATE]
        x = self._embed(frames, state.positions_emitted)
        if x.shape[0] != n:
            raise StateCorrupt(f"expected {n} positions from {frames.shape[0]} frames, got {x.shape[0]}")
        for i, layer in enumerate(self.layers):
            x, state.k_cache[i], state.v_cache[i] = layer.forward_cached(x, state.k_cache[i], state.v_cache[i])
        state.positions_emitted += n
        state.pending = state.pending[SUBSAMPLE_RATE * n:]
        state.pending_offset += SUBSAMPLE_RATE * n
        return self.final_norm(x)
