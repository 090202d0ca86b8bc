"""Deterministic models and synthetic utterances shared by the test modules."""

from __future__ import annotations

import numpy as np

from u2asr.decoder import DecoderConfig
from u2asr.encoder import EncoderConfig
from u2asr.frontend import SAMPLE_RATE, AudioBuffer
from u2asr.model_store import init_seeded
from u2asr.rng import Rng

VOCAB = 10


def tiny_model(seed: int = 0, vocab: int = VOCAB, enc_layers: int = 2, dec_layers: int = 1, d_model: int = 16):
    return init_seeded(EncoderConfig(num_layers=enc_layers, d_model=d_model, heads=2, d_ffn=4 * d_model),
                       DecoderConfig(num_layers=dec_layers, d_model=d_model, heads=2, d_ffn=4 * d_model),
                       vocab, seed)


def synth_utterance(seed: int, seconds: float = 1.5) -> AudioBuffer:
    """50-200 ms segments, each white noise, a pure tone or silence, at levels spanning 60 dB."""
    rng = Rng(seed)
    n = int(seconds * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = int((0.05 + 0.15 * rng.uniform()) * SAMPLE_RATE)
        sl = slice(pos, min(pos + seg, n))
        kind = rng.randint(3)
        amp = 10 ** (1 + 3 * rng.uniform())
        if kind == 0:
            out[sl] = (rng.uniform_array(sl.stop - sl.start) - 0.5) * 2 * amp
        elif kind == 1:
            out[sl] = amp * np.sin(2 * np.pi * (100 + 3000 * rng.uniform()) * t[sl])
        pos += seg
    return AudioBuffer(np.clip(out, -32768, 32767).astype(np.int16))


def noise_utterance(seed: int, seconds: float = 1.0, amplitude: float = 3000.0) -> AudioBuffer:
    rng = Rng(seed)
    n = int(seconds * SAMPLE_RATE)
    return AudioBuffer(((rng.uniform_array(n) - 0.5) * 2 * amplitude).astype(np.int16))
