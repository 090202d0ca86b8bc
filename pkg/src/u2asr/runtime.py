"""Streaming recognition sessions and the offline decoding pipeline.

A :class:`Session` runs frontend -> chunked encoder -> streaming CTC prefix
beam search while audio arrives, and attention rescoring once the caller
signals the end of speech with :meth:`Session.finalize`.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from .ctc import CtcPrefixBeamSearch, ctc_greedy_search, ctc_prefix_beam_search
from .errors import SessionFinalized, UnsupportedMode
from .frontend import FRAME_SHIFT, SAMPLE_RATE, AudioBuffer, fbank_frames, num_frames
from .encoder import MIN_FRAMES
from .masking import FULL, validate_chunk
from .model_store import Model
from .scoring import LatencyReport, ScoringConfig, attention_rescoring, model_latency_ms, rtf

ATTENTION = "attention"
CTC_GREEDY = "ctc_greedy_search"
CTC_PREFIX_BEAM = "ctc_prefix_beam_search"
ATTENTION_RESCORING = "attention_rescoring"
MODES = (ATTENTION, CTC_GREEDY, CTC_PREFIX_BEAM, ATTENTION_RESCORING)


@dataclass
class DecodeConfig:
    chunk_size: int = 16
    beam: int = 10
    ctc_weight: float = 0.5
    mode: str = ATTENTION_RESCORING

    def __post_init__(self):
        validate_chunk(self.chunk_size)
        if self.mode not in MODES:
            raise UnsupportedMode(f"unknown decoding mode {self.mode!r}")
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.ctc_weight < 0:
            raise ValueError("ctc_weight must be >= 0")

    @property
    def streaming(self) -> bool:
        return self.chunk_size != FULL


@dataclass
class PartialResult:
    tokens: list[int]
    is_final: bool = False
    latency: LatencyReport | None = None
    encoder_frames: int = 0


def decode_features(model: Model, feats: np.ndarray, cfg: DecodeConfig) -> list[int]:
    """Offline pipeline: encode the whole utterance under ``cfg.chunk_size``'s mask, then search."""
    if feats.shape[0] < MIN_FRAMES:
        return []
    enc = model.encoder.encode_full(feats, cfg.chunk_size)
    return _search(model, enc, model.ctc_posteriors(enc), cfg)


def _search(model: Model, enc: np.ndarray, post: np.ndarray, cfg: DecodeConfig, hyps=None) -> list[int]:
    if enc.shape[0] == 0:
        return []
    if cfg.mode == CTC_GREEDY:
        return ctc_greedy_search(post)
    if cfg.mode == CTC_PREFIX_BEAM:
        hyps = hyps if hyps is not None else ctc_prefix_beam_search(post, cfg.beam)
        return list(hyps[0].prefix)
    if cfg.mode == ATTENTION:
        return model.decoder.beam_search(enc, cfg.beam, max_len=enc.shape[0])[0].tokens
    scoring = ScoringConfig(ctc_weight=cfg.ctc_weight, beam=cfg.beam)
    return attention_rescoring(enc, post, model.decoder, scoring, hyps=hyps).tokens


class SessionState(enum.Enum):
    IDLE = "idle"
    ACTIVE = "active"
    FINALIZED = "finalized"


class Session:
    """One utterance. Owned by a single caller; the model is shared read-only."""

    def __init__(self, model: Model, cfg: DecodeConfig):
        if cfg.streaming and cfg.mode != ATTENTION_RESCORING:
            raise UnsupportedMode(f"streaming chunk size {cfg.chunk_size} only supports {ATTENTION_RESCORING}, "
                                  f"got {cfg.mode}")
        self.model = model
        self.cfg = cfg
        self.state = SessionState.IDLE
        self._samples = np.zeros(0, dtype=np.int16)  # samples from _frames_done * FRAME_SHIFT on
        self._total_samples = 0
        self._frames_done = 0
        self._feats: list[np.ndarray] = []  # FULL mode only
        self._enc_state = model.encoder.init_state()
        self._search = CtcPrefixBeamSearch(cfg.beam)
        self._enc_rows: list[np.ndarray] = []
        self._post_rows: list[np.ndarray] = []
        self._encoder_frames = 0
        self._busy_seconds = 0.0

    @property
    def audio_seconds(self) -> float:
        return self._total_samples / SAMPLE_RATE

    def _new_features(self) -> np.ndarray:
        total = num_frames(self._total_samples)
        feats = fbank_frames(self._samples, 0, total - self._frames_done)
        self._samples = self._samples[(total - self._frames_done) * FRAME_SHIFT:]
        self._frames_done = total
        return feats

    def push_audio(self, pcm) -> list[PartialResult]:
        """Append audio; return one partial result per newly completed encoder chunk."""
        if self.state is SessionState.FINALIZED:
            raise SessionFinalized("session already finalized")
        start = time.perf_counter()
        samples = pcm.samples if isinstance(pcm, AudioBuffer) else np.asarray(pcm, dtype=np.int16).reshape(-1)
        self.state = SessionState.ACTIVE
        self._samples = np.concatenate([self._samples, samples])
        self._total_samples += samples.shape[0]
        feats = self._new_features()
        results = []
        if not self.cfg.streaming:
            self._feats.append(feats)
        elif feats.shape[0]:
            rows = self.model.encoder.encode_chunk(self._enc_state, feats, self.cfg.chunk_size)
            for i in range(0, rows.shape[0], self.cfg.chunk_size):
                self._consume(rows[i:i + self.cfg.chunk_size])
                results.append(PartialResult(self._search.best(), encoder_frames=self._encoder_frames))
        self._busy_seconds += time.perf_counter() - start
        return results

    def _consume(self, rows: np.ndarray) -> None:
        post = self.model.ctc_posteriors(rows)
        self._search.advance(post)
        self._enc_rows.append(rows)
        self._post_rows.append(post)
        self._encoder_frames += rows.shape[0]

    def finalize(self) -> PartialResult:
        """Flush the encoder, finish the CTC search and rescore; the session becomes finalized."""
        if self.state is SessionState.FINALIZED:
            raise SessionFinalized("session already finalized")
        start = time.perf_counter()
        if self.cfg.streaming:
            tail = self.model.encoder.encode_chunk(self._enc_state, np.zeros((0, 80), np.float32),
                                                   self.cfg.chunk_size, is_last=True)
            if tail.shape[0]:
                self._consume(tail)
            enc = self._concat(self._enc_rows, self.model.enc_cfg.d_model)
            post = self._concat(self._post_rows, self.model.vocab_size + 1)
            rescore_start = time.perf_counter()
            tokens = _search(self.model, enc, post, self.cfg, hyps=self._search.hypotheses())
        else:
            feats = self._concat(self._feats, 80)
            if feats.shape[0] >= MIN_FRAMES:
                enc = self.model.encoder.encode_full(feats, FULL)
                post = self.model.ctc_posteriors(enc)
            else:
                enc = np.zeros((0, self.model.enc_cfg.d_model), np.float32)
                post = np.zeros((0, self.model.vocab_size + 1), np.float32)
            self._encoder_frames = enc.shape[0]
            rescore_start = time.perf_counter()
            tokens = _search(self.model, enc, post, self.cfg)
        end = time.perf_counter()
        self._busy_seconds += end - start
        self.state = SessionState.FINALIZED
        l1 = model_latency_ms(self.cfg.chunk_size) if self.cfg.streaming else self.audio_seconds * 1000.0
        report = LatencyReport(
            L1_ms=l1,
            L2_ms=(end - rescore_start) * 1000.0,
            L3_ms=(end - start) * 1000.0,
            rtf=rtf(self._busy_seconds, self.audio_seconds) if self._total_samples else 0.0,
        )
        return PartialResult(tokens, True, report, self._encoder_frames)

    @staticmethod
    def _concat(parts, width):
        return np.concatenate(parts) if parts else np.zeros((0, width), dtype=np.float32)


def open_session(model: Model, cfg: DecodeConfig) -> Session:
    return Session(model, cfg)


def recognize_stream(model: Model, audio: AudioBuffer, cfg: DecodeConfig, piece: int | None = None):
    """Feed ``audio`` through a session (in ``piece``-sample pushes) and return (partials, final)."""
    session = Session(model, cfg)
    partials = []
    step = piece or max(len(audio.samples), 1)
    for i in range(0, len(audio.samples), step):
        partials += session.push_audio(audio.samples[i:i + step])
    return partials, session.finalize()
