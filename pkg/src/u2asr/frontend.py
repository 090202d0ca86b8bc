"""Audio front end: WAV reading, 80-dim log-mel FBANK and SpecAugment."""

from __future__ import annotations

import io
import math
import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import SampleRateUnsupported, TooShort, WavFormatError
from .rng import Rng

SAMPLE_RATE = 16000
FRAME_LENGTH = 400  # 25 ms
FRAME_SHIFT = 160  # 10 ms
FRAME_SHIFT_MS = 10
FRAME_LENGTH_MS = 25
N_FFT = 512
NUM_MEL_BINS = 80
PREEMPH = 0.97
ENERGY_FLOOR = 1e-10


@dataclass
class AudioBuffer:
    samples: np.ndarray  # int16
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int16).reshape(-1)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SpecAugmentConfig:
    num_freq_masks: int = 2
    max_freq_mask: int = 10
    num_time_masks: int = 2
    max_time_mask: int = 50
    seed: int = 0

    def __post_init__(self):
        if min(self.num_freq_masks, self.num_time_masks, self.max_time_mask) < 0:
            raise ValueError("SpecAugment counts must be non-negative")
        if not 0 <= self.max_freq_mask <= NUM_MEL_BINS:
            raise ValueError(f"max_freq_mask must be in [0, {NUM_MEL_BINS}]")


def read_wav(path_or_bytes) -> AudioBuffer:
    """Read a RIFF/WAVE file holding 16 kHz mono s16le PCM."""
    src = io.BytesIO(path_or_bytes) if isinstance(path_or_bytes, (bytes, bytearray)) else str(path_or_bytes)
    try:
        with wave.open(src, "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            data = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as e:
        raise WavFormatError(f"{path_or_bytes if isinstance(path_or_bytes, (str, Path)) else '<bytes>'}: {e}") from e
    if channels != 1 or width != 2:
        raise WavFormatError(f"need mono 16-bit PCM, got {channels} channel(s) of {8 * width}-bit")
    if rate != SAMPLE_RATE:
        raise SampleRateUnsupported(f"sample rate {rate} Hz, only {SAMPLE_RATE} Hz is supported")
    return AudioBuffer(np.frombuffer(data, dtype="<i2").astype(np.int16), rate)


def write_wav(path, audio: AudioBuffer) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(audio.samples.astype("<i2").tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_banks() -> np.ndarray:
    """(NUM_MEL_BINS, N_FFT//2 + 1) triangular filters, linear in mel, 0 Hz to Nyquist."""
    n_bins = N_FFT // 2 + 1
    mel_lo, mel_hi = 0.0, float(hz_to_mel(SAMPLE_RATE / 2))
    delta = (mel_hi - mel_lo) / (NUM_MEL_BINS + 1)
    bin_mel = hz_to_mel(np.arange(n_bins) * SAMPLE_RATE / N_FFT)
    banks = np.zeros((NUM_MEL_BINS, n_bins))
    for m in range(NUM_MEL_BINS):
        left, center, right = mel_lo + m * delta, mel_lo + (m + 1) * delta, mel_lo + (m + 2) * delta
        up = (bin_mel - left) / (center - left)
        down = (right - bin_mel) / (right - center)
        banks[m] = np.maximum(0.0, np.minimum(up, down))
    banks.setflags(write=False)
    return banks


@lru_cache(maxsize=None)
def _window() -> np.ndarray:
    w = np.hamming(FRAME_LENGTH)
    w.setflags(write=False)
    return w


def num_frames(num_samples: int) -> int:
    if num_samples < FRAME_LENGTH:
        return 0
    return 1 + (num_samples - FRAME_LENGTH) // FRAME_SHIFT


def _frames_fbank(frames: np.ndarray) -> np.ndarray:
    # every reduction runs along a row on its own (no BLAS), so each output row
    # is bit-identical whatever batch it was computed in
    x = frames.astype(np.float64)
    x = np.concatenate((x[:, :1] - PREEMPH * x[:, :1], x[:, 1:] - PREEMPH * x[:, :-1]), axis=1)
    spec = np.fft.rfft(x * _window(), n=N_FFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = np.einsum("tk,mk->tm", power, mel_banks())
    return np.log(np.maximum(energies, ENERGY_FLOOR))


def compute_fbank(audio: AudioBuffer) -> np.ndarray:
    """Log-mel filterbank features.

    Returns:
        float32 array of shape ``(1 + (N - 400) // 160, 80)``.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise SampleRateUnsupported(f"sample rate {audio.sample_rate} Hz, only {SAMPLE_RATE} Hz is supported")
    n = len(audio.samples)
    if n < FRAME_LENGTH:
        raise TooShort(f"{n} samples, need at least {FRAME_LENGTH}")
    return fbank_frames(audio.samples, 0, num_frames(n))


def fbank_frames(samples: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Frames ``[start, stop)`` of the FBANK of ``samples`` (frame indices relative to sample 0)."""
    count = max(stop - start, 0)
    if count == 0:
        return np.empty((0, NUM_MEL_BINS), dtype=np.float32)
    idx = (start + np.arange(count))[:, None] * FRAME_SHIFT + np.arange(FRAME_LENGTH)[None, :]
    return _frames_fbank(np.asarray(samples)[idx]).astype(np.float32)


def spec_augment(feats: np.ndarray, cfg: SpecAugmentConfig) -> np.ndarray:
    """Zero out random frequency bands and time spans.

    Mask widths are uniform on ``[0, max]``; the band start is uniform over
    the positions where the band fits. Draw order: all frequency masks
    (width then start), then all time masks.
    """
    if feats.size == 0:
        raise ValueError("spec_augment needs a nonempty feature matrix")
    out = np.array(feats, copy=True)
    n_frames, n_bins = out.shape
    rng = Rng(cfg.seed)
    for _ in range(cfg.num_freq_masks):
        width = rng.randint(min(cfg.max_freq_mask, n_bins) + 1)
        start = rng.randint(n_bins - width + 1)
        out[:, start:start + width] = 0.0
    for _ in range(cfg.num_time_masks):
        width = rng.randint(min(cfg.max_time_mask, n_frames) + 1)
        start = rng.randint(n_frames - width + 1)
        out[start:start + width, :] = 0.0
    return out


def log_floor() -> float:
    return math.log(ENERGY_FLOOR)
