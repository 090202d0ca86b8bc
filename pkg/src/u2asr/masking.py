"""Chunk-causal attention masks and dynamic chunk-size sampling."""

from __future__ import annotations

import numpy as np

from .rng import Rng

FULL = -1  # chunk size sentinel: full (non-streaming) attention


def is_full(chunk_size: int) -> bool:
    return chunk_size == FULL


def validate_chunk(chunk_size: int) -> int:
    if chunk_size != FULL and chunk_size < 1:
        raise ValueError(f"chunk size must be >= 1 or FULL ({FULL}), got {chunk_size}")
    return chunk_size


def chunk_mask(length: int, chunk_size: int) -> np.ndarray:
    """Boolean ``(length, length)`` visibility matrix, True = may attend.

    Position t sees every position s < (t // C + 1) * C, i.e. its own chunk
    (including later frames of that chunk) and all earlier chunks.
    """
    if length < 1:
        raise ValueError("mask length must be >= 1")
    validate_chunk(chunk_size)
    if chunk_size == FULL:
        return np.ones((length, length), dtype=bool)
    t = np.arange(length)
    limit = (t // chunk_size + 1) * chunk_size
    return t[None, :] < limit[:, None]


def sample_dynamic_chunk(max_len: int, rng: Rng) -> int:
    """Uniform draw over ``{1, ..., max_len} ∪ {FULL}``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    i = rng.randint(max_len + 1)
    return FULL if i == max_len else i + 1
